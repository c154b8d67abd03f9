#!/usr/bin/env python3
"""Dense statevector simulation over the gate set {H, RZ, CNOT}.

Qubit 0 is the least-significant bit of a basis-state index, so basis index
``k`` has qubit ``q`` set when ``(k >> q) & 1``. Every operation returns a new
value; amplitude arrays held by a ``Statevector`` are read-only.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, Tuple, Union

import numpy as np

from quanvnet.errors import ArgumentError, QubitIndexError, ShapeError, SizeError

logger = logging.getLogger(__name__)

MAX_QUBITS = 25
NORM_TOLERANCE = 1e-10

Seed = Union[int, np.random.SeedSequence]

H_MATRIX = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=np.complex128) * np.sqrt(0.5)

# kron(control, target) ordering, control as the high bit
CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128
)


def rz_matrix(angle: float) -> np.ndarray:
    """Rz(angle) = diag(e^{-i angle/2}, e^{+i angle/2})"""
    return np.diag([np.exp(-0.5j * angle), np.exp(0.5j * angle)]).astype(np.complex128)


def zz_matrix(theta: float) -> np.ndarray:
    """Ising ZZ coupling exp(-i theta/2 Z x Z), defined up to a global phase"""
    return np.diag(np.exp(-0.5j * theta * np.array([1.0, -1.0, -1.0, 1.0]))).astype(np.complex128)


def cnot_rz_cnot_matrix(theta: float) -> np.ndarray:
    """Operator realized by CNOT . (I x Rz(theta)) . CNOT"""
    even, odd = np.exp(-0.5j * theta), np.exp(0.5j * theta)
    return np.diag([even, odd, odd, even]).astype(np.complex128)


class GateKind(str, Enum):
    H = "H"
    RZ = "RZ"
    CNOT = "CNOT"


_ARITY = {GateKind.H: 1, GateKind.RZ: 1, GateKind.CNOT: 2}


@dataclass(frozen=True)
class Gate:
    kind: GateKind
    qubits: Tuple[int, ...]
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        if len(self.qubits) != _ARITY[self.kind]:
            raise ArgumentError(
                f"{self.kind.value} acts on {_ARITY[self.kind]} qubit(s), got {len(self.qubits)}"
            )
        if any(q < 0 for q in self.qubits):
            raise QubitIndexError(f"negative qubit index in {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise QubitIndexError(f"CNOT control and target must differ, got {self.qubits}")
        if not np.isfinite(self.angle):
            raise ArgumentError(f"gate angle must be finite, got {self.angle}")

    @classmethod
    def h(cls, qubit: int) -> "Gate":
        return cls(GateKind.H, (qubit,))

    @classmethod
    def rz(cls, qubit: int, angle: float) -> "Gate":
        return cls(GateKind.RZ, (qubit,), float(angle))

    @classmethod
    def cnot(cls, control: int, target: int) -> "Gate":
        return cls(GateKind.CNOT, (control, target))


@dataclass(frozen=True)
class Circuit:
    num_qubits: int
    gates: Tuple[Gate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.num_qubits < 1:
            raise SizeError(f"circuit needs at least one qubit, got {self.num_qubits}")
        for gate in self.gates:
            _check_qubits(gate, self.num_qubits)

    def __len__(self) -> int:
        return len(self.gates)

    def extended(self, gates: Iterable[Gate]) -> "Circuit":
        return Circuit(self.num_qubits, self.gates + tuple(gates))


@dataclass(frozen=True, eq=False)
class Statevector:
    num_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        if not 1 <= self.num_qubits <= MAX_QUBITS:
            raise SizeError(f"qubit count must be in [1, {MAX_QUBITS}], got {self.num_qubits}")
        amps = self.amplitudes
        if amps.ndim != 1 or amps.shape[0] != 1 << self.num_qubits:
            raise ShapeError(
                f"{self.num_qubits} qubits need {1 << self.num_qubits} amplitudes, got shape {amps.shape}"
            )
        amps.setflags(write=False)

    @classmethod
    def from_amplitudes(cls, values: Iterable[complex]) -> "Statevector":
        """Build a state from explicit amplitudes

        Args:
            values (Iterable[complex]): Amplitudes of length 2^n, unit norm

        Returns:
            Statevector: A state owning a private copy of the amplitudes
        """
        amps = np.array(list(values), dtype=np.complex128)
        size = amps.shape[0]
        if size < 2 or size & (size - 1):
            raise ShapeError(f"amplitude count must be a power of two >= 2, got {size}")
        norm = float(np.sum(np.abs(amps) ** 2))
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ArgumentError(f"amplitudes must have unit norm, got {norm}")
        return cls(size.bit_length() - 1, amps)

    @property
    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))


@dataclass(frozen=True)
class ShotHistogram:
    num_qubits: int
    counts: Dict[int, int] = field(default_factory=dict)
    total_shots: int = 0

    def frequency(self, index: int) -> float:
        return self.counts.get(index, 0) / self.total_shots


def _check_qubits(gate: Gate, num_qubits: int) -> None:
    for q in gate.qubits:
        if q >= num_qubits:
            raise QubitIndexError(
                f"{gate.kind.value} addresses qubit {q} on a {num_qubits}-qubit register"
            )


def _apply_single(amps: np.ndarray, n: int, qubit: int, matrix: np.ndarray) -> np.ndarray:
    view = amps.reshape(1 << (n - 1 - qubit), 2, 1 << qubit)
    zero, one = view[:, 0, :], view[:, 1, :]
    out = np.empty_like(view)
    out[:, 0, :] = matrix[0, 0] * zero + matrix[0, 1] * one
    out[:, 1, :] = matrix[1, 0] * zero + matrix[1, 1] * one
    return out.reshape(-1)


def _apply_cnot(amps: np.ndarray, n: int, control: int, target: int) -> np.ndarray:
    hi, lo = max(control, target), min(control, target)
    # axis 1 carries bit hi, axis 3 carries bit lo
    view = amps.reshape(1 << (n - 1 - hi), 2, 1 << (hi - lo - 1), 2, 1 << lo)
    out = view.copy()
    if control == hi:
        out[:, 1, :, 0, :] = view[:, 1, :, 1, :]
        out[:, 1, :, 1, :] = view[:, 1, :, 0, :]
    else:
        out[:, 0, :, 1, :] = view[:, 1, :, 1, :]
        out[:, 1, :, 1, :] = view[:, 0, :, 1, :]
    return out.reshape(-1)


def _apply_raw(amps: np.ndarray, n: int, gate: Gate) -> np.ndarray:
    if gate.kind is GateKind.H:
        return _apply_single(amps, n, gate.qubits[0], H_MATRIX)
    if gate.kind is GateKind.RZ:
        return _apply_single(amps, n, gate.qubits[0], rz_matrix(gate.angle))
    return _apply_cnot(amps, n, gate.qubits[0], gate.qubits[1])


def zero_state(n: int) -> Statevector:
    """|0...0> on n qubits"""
    if not 1 <= n <= MAX_QUBITS:
        raise SizeError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[0] = 1.0
    return Statevector(n, amps)


def basis_state(n: int, index: int) -> Statevector:
    """Computational basis state |index> on n qubits"""
    if not 1 <= n <= MAX_QUBITS:
        raise SizeError(f"qubit count must be in [1, {MAX_QUBITS}], got {n}")
    if not 0 <= index < 1 << n:
        raise QubitIndexError(f"basis index {index} out of range for {n} qubits")
    amps = np.zeros(1 << n, dtype=np.complex128)
    amps[index] = 1.0
    return Statevector(n, amps)


def apply_gate(state: Statevector, gate: Gate) -> Statevector:
    """Apply one gate

    Args:
        state (Statevector): Input state
        gate (Gate): Gate whose qubits exist on the state's register

    Returns:
        Statevector: The evolved state
    """
    _check_qubits(gate, state.num_qubits)
    return Statevector(state.num_qubits, _apply_raw(state.amplitudes, state.num_qubits, gate))


def apply_circuit(state: Statevector, circuit: Circuit) -> Statevector:
    """Apply every gate of a circuit in order"""
    if circuit.num_qubits != state.num_qubits:
        raise ShapeError(
            f"circuit has {circuit.num_qubits} qubits, state has {state.num_qubits}"
        )
    n = state.num_qubits
    amps = state.amplitudes
    for gate in circuit.gates:
        amps = _apply_raw(amps, n, gate)
    if amps is state.amplitudes:
        return state
    return Statevector(n, amps)


def circuit_unitary(circuit: Circuit) -> np.ndarray:
    """Operator matrix of a circuit, assembled column by column from basis states"""
    n = circuit.num_qubits
    columns = [apply_circuit(basis_state(n, k), circuit).amplitudes for k in range(1 << n)]
    return np.stack(columns, axis=1)


def exact_probabilities(state: Statevector) -> np.ndarray:
    """Born-rule probabilities of all 2^n basis states"""
    return np.abs(state.amplitudes) ** 2


def marginal_ones(probabilities: np.ndarray, num_qubits: int) -> np.ndarray:
    """Per-qubit probability of reading 1 from a basis-state distribution"""
    probs = np.asarray(probabilities, dtype=np.float64)
    if probs.shape != (1 << num_qubits,):
        raise ShapeError(f"expected {1 << num_qubits} probabilities, got shape {probs.shape}")
    ones = np.empty(num_qubits)
    for q in range(num_qubits):
        ones[q] = probs.reshape(1 << (num_qubits - 1 - q), 2, 1 << q)[:, 1, :].sum()
    return np.clip(ones, 0.0, 1.0)


def pair_agreement(probabilities: np.ndarray, num_qubits: int, a: int, b: int) -> float:
    """Probability that qubits a and b read the same bit"""
    if a == b or not (0 <= a < num_qubits and 0 <= b < num_qubits):
        raise QubitIndexError(f"invalid qubit pair ({a}, {b}) for {num_qubits} qubits")
    hi, lo = max(a, b), min(a, b)
    view = np.asarray(probabilities, dtype=np.float64).reshape(
        1 << (num_qubits - 1 - hi), 2, 1 << (hi - lo - 1), 2, 1 << lo
    )
    return float(view[:, 0, :, 0, :].sum() + view[:, 1, :, 1, :].sum())


def one_probabilities(state: Statevector) -> np.ndarray:
    """Per-qubit probability of measuring 1"""
    return marginal_ones(exact_probabilities(state), state.num_qubits)


def same_state_probability(state: Statevector) -> float:
    """P(|00>) + P(|11>) of a two-qubit state"""
    if state.num_qubits != 2:
        raise ShapeError(f"same-state probability needs 2 qubits, got {state.num_qubits}")
    return pair_agreement(exact_probabilities(state), 2, 0, 1)


def sample_shots(state: Statevector, shots: int, seed: Seed) -> ShotHistogram:
    """Draw a seeded multinomial shot histogram from the exact distribution

    Args:
        state (Statevector): State to measure in the computational basis
        shots (int): Number of measurements, at least 1
        seed (int or SeedSequence): Randomness source; equal seeds give equal histograms

    Returns:
        ShotHistogram: Counts keyed by basis-state index (zero counts omitted)
    """
    if shots < 1:
        raise ArgumentError(f"shots must be >= 1, got {shots}")
    probs = exact_probabilities(state)
    probs = probs / probs.sum()
    rng = np.random.default_rng(seed)
    counts = rng.multinomial(shots, probs)
    observed = np.flatnonzero(counts)
    return ShotHistogram(
        num_qubits=state.num_qubits,
        counts={int(k): int(counts[k]) for k in observed},
        total_shots=int(shots),
    )


def histogram_frequencies(histogram: ShotHistogram) -> np.ndarray:
    """Empirical probability vector of a shot histogram"""
    freqs = np.zeros(1 << histogram.num_qubits)
    for index, count in histogram.counts.items():
        freqs[index] = count
    return freqs / histogram.total_shots
