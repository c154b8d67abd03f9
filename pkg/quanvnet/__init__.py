"""Quanvolutional neural networks with QAOA filters on a simulated statevector"""

__version__ = "0.1.0"
