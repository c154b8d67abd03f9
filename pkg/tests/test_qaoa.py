#!/usr/bin/env python3

import os
import shutil
import tempfile
import unittest

import numpy as np

from quanvnet.errors import ArgumentError, ShapeError, TopologyError
from quanvnet.qaoa import (
    QaoaAnsatz,
    WeightedGraph,
    build_qaoa_circuit,
    bundled_topology,
    circuit_depth,
    default_topology,
    expected_gate_count,
    load_topology,
    make_ansatz,
    random_weighted_graph,
    read_topology,
)
from quanvnet.statevector import Circuit, Gate, GateKind


class TestTopology(unittest.TestCase):
    def test_minimal_topology(self):
        """Test a two-node, one-edge description"""
        topology = load_topology("qubits=2; edges=(0,1)")
        self.assertEqual(topology.num_qubits, 2)
        self.assertEqual(topology.edges, ((0, 1),))

    def test_edge_entries_and_comments(self):
        """Test single-edge entries, comments and kept edge order"""
        topology = load_topology("# ring\nqubits=3\nedge=1,2\nedge=0,1  # last\n")
        self.assertEqual(topology.edges, ((1, 2), (0, 1)))

    def test_default_topology(self):
        """Test the bundled default has 25 qubits and 24 edges"""
        topology = default_topology()
        self.assertEqual(topology.num_qubits, 25)
        self.assertEqual(topology.num_edges, 24)
        self.assertEqual(bundled_topology("chain5").num_edges, 4)

    def test_invalid_topologies(self):
        """Test self-loops, duplicates, bad indices and malformed text"""
        for text in [
            "qubits=2; edges=(0,0)",
            "qubits=2; edges=(0,1),(1,0)",
            "qubits=2; edges=(0,2)",
            "edges=(0,1)",
            "qubits=2; wires=(0,1)",
            "qubits=two",
            "qubits=3; edges=(0,1) junk",
        ]:
            with self.assertRaises(TopologyError, msg=text):
                load_topology(text)

    def test_read_topology_names_by_file(self):
        """Test topology files take their stem as name"""
        tmp = tempfile.mkdtemp()
        try:
            path = os.path.join(tmp, "pair.topo")
            with open(path, "w") as f:
                f.write("qubits=2\nedge=0,1\n")
            self.assertEqual(read_topology(path).name, "pair")
        finally:
            shutil.rmtree(tmp)


class TestWeights(unittest.TestCase):
    def test_seeded_weights(self):
        """Test weights are reproducible per seed and differ across seeds"""
        topology = default_topology()
        first = random_weighted_graph(topology, 3).weights
        np.testing.assert_array_equal(first, random_weighted_graph(topology, 3).weights)
        self.assertFalse(np.array_equal(first, random_weighted_graph(topology, 4).weights))

    def test_weight_range(self):
        """Test weights stay in [0.1, 1.0] over many seeds"""
        topology = default_topology()
        weights = np.concatenate([random_weighted_graph(topology, s).weights for s in range(1000)])
        self.assertEqual(weights.shape, (24000,))
        self.assertGreaterEqual(weights.min(), 0.1)
        self.assertLessEqual(weights.max(), 1.0)

    def test_weight_validation(self):
        """Test weight count and value checks"""
        topology = load_topology("qubits=2; edges=(0,1)")
        with self.assertRaises(ShapeError):
            WeightedGraph(topology, [0.5, 0.5])
        with self.assertRaises(ArgumentError):
            WeightedGraph(topology, [0.0])


class TestCircuit(unittest.TestCase):
    def test_two_qubit_circuit(self):
        """Test the one-edge circuit layout"""
        graph = WeightedGraph(load_topology("qubits=2; edges=(0,1)"), [1.0])
        circuit = build_qaoa_circuit(QaoaAnsatz(graph, 1), [0.3, 0.7])
        self.assertEqual(len(circuit), 11)
        kinds = [g.kind for g in circuit.gates]
        self.assertEqual(kinds[:5], [GateKind.H, GateKind.H, GateKind.CNOT, GateKind.RZ, GateKind.CNOT])
        self.assertEqual(circuit.gates[3].qubits, (1,))
        self.assertAlmostEqual(circuit.gates[3].angle, 0.3)
        self.assertEqual([g.angle for g in circuit.gates[5:8]], [0.0, 0.7, 0.0])

    def test_parameter_counts(self):
        """Test (|E| + 1) * p parameters"""
        topology = default_topology()
        self.assertEqual(make_ansatz(topology, 0, p=1).parameter_count, 25)
        self.assertEqual(make_ansatz(topology, 0, p=4).parameter_count, 100)
        self.assertEqual(make_ansatz(bundled_topology("chain5"), 0, p=3).parameter_count, 15)

    def test_gate_count(self):
        """Test n + p(3|E| + 3n) gates for every p"""
        topology = default_topology()
        for p in range(1, 5):
            ansatz = make_ansatz(topology, p, p=p)
            circuit = build_qaoa_circuit(ansatz, np.linspace(0, 1, ansatz.parameter_count))
            self.assertEqual(len(circuit), expected_gate_count(topology, p))

    def test_parameter_length_mismatch(self):
        """Test wrong parameter counts are rejected"""
        ansatz = make_ansatz(default_topology(), 0)
        with self.assertRaises(ShapeError):
            build_qaoa_circuit(ansatz, np.zeros(24))

    def test_layer_count_validation(self):
        """Test p must be positive"""
        with self.assertRaises(ArgumentError):
            make_ansatz(default_topology(), 0, p=0)

    def test_weight_scales_edge_angle(self):
        """Test doubling a weight while halving its angle keeps gate angles"""
        topology = load_topology("qubits=3; edges=(0,1),(1,2)")
        a = build_qaoa_circuit(QaoaAnsatz(WeightedGraph(topology, [0.4, 0.9]), 1), [1.2, 0.5, 0.3])
        b = build_qaoa_circuit(QaoaAnsatz(WeightedGraph(topology, [0.8, 0.9]), 1), [0.6, 0.5, 0.3])
        self.assertEqual([g.angle for g in a.gates], [g.angle for g in b.gates])

    def test_driver_angle_not_weighted(self):
        """Test beta reaches every driver RZ unscaled"""
        ansatz = make_ansatz(bundled_topology("chain5"), 9)
        circuit = build_qaoa_circuit(ansatz, [1, 1, 1, 1, 0.25])
        drivers = [g.angle for g in circuit.gates[5 + 12:] if g.kind is GateKind.RZ]
        self.assertEqual(drivers, [0.25] * 5)


class TestDepth(unittest.TestCase):
    def test_trivial_depths(self):
        """Test empty and parallel circuits"""
        self.assertEqual(circuit_depth(Circuit(2)), 0)
        self.assertEqual(circuit_depth(Circuit(2, (Gate.h(0), Gate.h(1)))), 1)
        self.assertEqual(circuit_depth(Circuit(2, (Gate.h(0), Gate.cnot(0, 1), Gate.h(1)))), 3)

    def test_default_depth(self):
        """Test the default p=1 circuit depth is around 40"""
        ansatz = make_ansatz(default_topology(), 0)
        depth = circuit_depth(build_qaoa_circuit(ansatz, np.ones(25)))
        self.assertGreaterEqual(depth, 30)
        self.assertLessEqual(depth, 50)


if __name__ == "__main__":
    unittest.main()
