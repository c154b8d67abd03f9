#!/usr/bin/env python3
"""QAOA MaxCut circuits over a device topology.

A layer is one cost term CNOT . Rz(w_e * theta_e) . CNOT per edge, in edge
order, followed by the driver H . Rz(beta) . H on every qubit. Parameters are
laid out per layer as ``[theta_0 .. theta_{|E|-1}, beta]``.
"""

import logging
import os
import re
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from quanvnet.errors import ArgumentError, ShapeError, TopologyError
from quanvnet.statevector import Circuit, Gate, Seed

logger = logging.getLogger(__name__)

TOPOLOGY_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "topologies")
DEFAULT_TOPOLOGY = "aspen25"

WEIGHT_LOW = 0.1
WEIGHT_HIGH = 1.0

_PAIR = re.compile(r"\(\s*(-?\d+)\s*,\s*(-?\d+)\s*\)")

Edge = Tuple[int, int]


@dataclass(frozen=True)
class DeviceTopology:
    num_qubits: int
    edges: Tuple[Edge, ...]
    name: str = ""

    def __post_init__(self):
        edges = tuple((int(a), int(b)) for a, b in self.edges)
        object.__setattr__(self, "edges", edges)
        if self.num_qubits < 1:
            raise TopologyError(f"topology needs at least one qubit, got {self.num_qubits}")
        seen = set()
        for a, b in edges:
            if a == b:
                raise TopologyError(f"self-loop edge ({a},{b})")
            if not (0 <= a < self.num_qubits and 0 <= b < self.num_qubits):
                raise TopologyError(f"edge ({a},{b}) outside qubits 0..{self.num_qubits - 1}")
            key = (min(a, b), max(a, b))
            if key in seen:
                raise TopologyError(f"duplicate edge ({a},{b})")
            seen.add(key)

    @property
    def num_edges(self) -> int:
        return len(self.edges)


@dataclass(frozen=True, eq=False)
class WeightedGraph:
    topology: DeviceTopology
    weights: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64)
        if weights.shape != (self.topology.num_edges,):
            raise ShapeError(
                f"{self.topology.num_edges} edges need as many weights, got shape {weights.shape}"
            )
        if not np.all(np.isfinite(weights)) or np.any(weights == 0):
            raise ArgumentError("edge weights must be finite and nonzero")
        weights.setflags(write=False)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class QaoaAnsatz:
    graph: WeightedGraph
    p: int = 1

    def __post_init__(self):
        if self.p < 1:
            raise ArgumentError(f"layer count p must be >= 1, got {self.p}")

    @property
    def num_qubits(self) -> int:
        return self.graph.topology.num_qubits

    @property
    def parameters_per_layer(self) -> int:
        return self.graph.topology.num_edges + 1

    @property
    def parameter_count(self) -> int:
        return self.parameters_per_layer * self.p


def load_topology(source: str, name: str = "") -> DeviceTopology:
    """Parse a topology description

    Entries are separated by newlines or ``;``. Recognized entries are
    ``qubits=<n>``, ``edge=<a>,<b>`` and ``edges=(a,b),(c,d),...``; ``#`` starts
    a comment. Edge order is kept as written.

    Args:
        source (str): Topology text
        name (str, optional): Label carried by the topology

    Returns:
        DeviceTopology: The validated topology
    """
    num_qubits: Optional[int] = None
    edges: List[Edge] = []
    for line in source.splitlines():
        for entry in line.split("#", 1)[0].split(";"):
            entry = entry.strip()
            if not entry:
                continue
            if "=" not in entry:
                raise TopologyError(f"expected key=value, got '{entry}'")
            key, value = (part.strip() for part in entry.split("=", 1))
            try:
                if key == "qubits":
                    if num_qubits is not None:
                        raise TopologyError("qubits declared twice")
                    num_qubits = int(value)
                elif key == "edge":
                    a, b = value.split(",")
                    edges.append((int(a), int(b)))
                elif key == "edges":
                    pairs = _PAIR.findall(value)
                    if not pairs or _PAIR.sub("", value).strip(" ,"):
                        raise TopologyError(f"malformed edge list '{value}'")
                    edges.extend((int(a), int(b)) for a, b in pairs)
                else:
                    raise TopologyError(f"unknown topology key '{key}'")
            except ValueError as e:
                if isinstance(e, TopologyError):
                    raise
                raise TopologyError(f"bad value in '{entry}': {e}") from e
    if num_qubits is None:
        raise TopologyError("topology does not declare qubits=<n>")
    return DeviceTopology(num_qubits, tuple(edges), name)


def read_topology(path: str) -> DeviceTopology:
    """Load a topology file"""
    try:
        with open(path, "r") as f:
            text = f.read()
    except OSError as e:
        logger.error(f"Error reading topology {path}: {e}")
        raise
    name = os.path.splitext(os.path.basename(path))[0]
    return load_topology(text, name)


def bundled_topology(name: str) -> DeviceTopology:
    """One of the topology files shipped with the package, by stem name"""
    return read_topology(os.path.join(TOPOLOGY_DIR, f"{name}.topo"))


def default_topology() -> DeviceTopology:
    return bundled_topology(DEFAULT_TOPOLOGY)


def random_weighted_graph(topology: DeviceTopology, seed: Seed) -> WeightedGraph:
    """Draw i.i.d. uniform edge weights on [0.1, 1.0)"""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(WEIGHT_LOW, WEIGHT_HIGH, size=topology.num_edges)
    return WeightedGraph(topology, weights)


def make_ansatz(topology: DeviceTopology, seed: Seed, p: int = 1) -> QaoaAnsatz:
    return QaoaAnsatz(random_weighted_graph(topology, seed), p)


def build_qaoa_circuit(ansatz: QaoaAnsatz, params: Sequence[float]) -> Circuit:
    """Compile an ansatz and its parameters into {H, RZ, CNOT} gates

    Args:
        ansatz (QaoaAnsatz): Weighted graph and layer count
        params (Sequence[float]): ``parameter_count`` angles, per layer the
            edge angles in edge order followed by the driver angle

    Returns:
        Circuit: H on every qubit, then p cost/driver layers
    """
    values = np.asarray(params, dtype=np.float64)
    if values.shape != (ansatz.parameter_count,):
        raise ShapeError(
            f"ansatz takes {ansatz.parameter_count} parameters, got shape {values.shape}"
        )
    topology = ansatz.graph.topology
    weights = ansatz.graph.weights
    n, num_edges = topology.num_qubits, topology.num_edges

    gates = [Gate.h(q) for q in range(n)]
    for layer in range(ansatz.p):
        base = layer * ansatz.parameters_per_layer
        for e, (a, b) in enumerate(topology.edges):
            angle = float(weights[e] * values[base + e])
            gates += [Gate.cnot(a, b), Gate.rz(b, angle), Gate.cnot(a, b)]
        beta = float(values[base + num_edges])
        for q in range(n):
            gates += [Gate.h(q), Gate.rz(q, beta), Gate.h(q)]
    return Circuit(n, tuple(gates))


def expected_gate_count(topology: DeviceTopology, p: int) -> int:
    n, num_edges = topology.num_qubits, topology.num_edges
    return n + p * (3 * num_edges + 3 * n)


def circuit_depth(circuit: Circuit) -> int:
    """Critical-path length with gates on disjoint qubits sharing a layer

    Each gate occupies one layer on every qubit it touches and is placed
    right after the latest layer already used on those qubits.
    """
    depth: Dict[int, int] = {}
    deepest = 0
    for gate in circuit.gates:
        layer = max(depth.get(q, 0) for q in gate.qubits) + 1
        for q in gate.qubits:
            depth[q] = layer
        deepest = max(deepest, layer)
    return deepest
