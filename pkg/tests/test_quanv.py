#!/usr/bin/env python3

import unittest

import numpy as np

from quanvnet.errors import ArgumentError, ShapeError
from quanvnet.featcache import ComputeBudget, DynamicMapper
from quanvnet.qaoa import WeightedGraph, bundled_topology, load_topology
from quanvnet.quanv import (
    Decoder,
    FeatureMap,
    FilterMode,
    QuanvFilter,
    TensorBlock,
    apply_filter,
    encode_block,
    make_filter_bank,
    quanv_forward,
    tile_image,
)


def pair_filter(decoder=Decoder.AGREEMENT, shots=1000, seed=0) -> QuanvFilter:
    graph = WeightedGraph(load_topology("qubits=2; edges=(0,1)"), [1.0])
    return QuanvFilter(id=0, graph=graph, shots=shots, seed=seed, decoder=decoder)


class TestTiling(unittest.TestCase):
    def test_sat4_sized_image(self):
        """Test a 28x28x4 image gives 25 blocks of 100 values"""
        image = np.random.default_rng(0).integers(0, 256, size=(28, 28, 4))
        blocks = tile_image(image, 5, 5)
        self.assertEqual(len(blocks), 25)
        self.assertTrue(all(len(b) == 100 for b in blocks))
        self.assertEqual((blocks[7].row, blocks[7].col), (1, 2))

    def test_block_flattening_order(self):
        """Test blocks flatten over (height, width, channel)"""
        image = np.arange(10 * 10 * 2).reshape(10, 10, 2) % 256
        block = tile_image(image, 5, 5)[1]
        np.testing.assert_allclose(block.values * 255, image[0:5, 5:10, :].reshape(-1))

    def test_exact_fit_and_normalization(self):
        """Test a window-sized constant image"""
        blocks = tile_image(np.full((5, 5, 1), 255), 5, 5)
        self.assertEqual(len(blocks), 1)
        np.testing.assert_array_equal(blocks[0].values, np.ones(25))

    def test_window_too_large(self):
        """Test a window larger than the image"""
        with self.assertRaises(ShapeError):
            tile_image(np.zeros((4, 4, 1)), 5, 5)
        with self.assertRaises(ArgumentError):
            tile_image(np.zeros((8, 8, 1)), 5, 0)

    def test_block_range(self):
        """Test block values must be normalized"""
        with self.assertRaises(ArgumentError):
            TensorBlock(0, 0, [0.5, 1.5])


class TestEncoding(unittest.TestCase):
    def test_bounds(self):
        """Test all-zero and all-one blocks"""
        np.testing.assert_array_equal(encode_block(np.zeros(100)), np.zeros(25))
        np.testing.assert_allclose(encode_block(np.ones(100)), np.full(25, np.pi))

    def test_group_means(self):
        """Test consecutive groups of four"""
        values = np.ones(100)
        values[:3] = 0.0
        angles = encode_block(values)
        self.assertAlmostEqual(angles[0], np.pi / 4)
        self.assertAlmostEqual(angles[1], np.pi)

    def test_non_divisible_length(self):
        """Test block length must divide by the group size"""
        with self.assertRaises(ShapeError):
            encode_block(np.zeros(10), group_size=4)

    def test_within_group_permutation(self):
        """Test permuting values inside a group gives identical angles"""
        rng = np.random.default_rng(5)
        values = rng.uniform(size=100)
        shuffled = values.reshape(25, 4).copy()
        for row in shuffled:
            rng.shuffle(row)
        np.testing.assert_array_equal(encode_block(values), encode_block(shuffled.reshape(-1)))

    def test_scaling_pixels_scales_angles(self):
        """Test a common intensity factor scales every angle"""
        values = np.random.default_rng(6).uniform(size=100)
        np.testing.assert_allclose(encode_block(values * 0.3), encode_block(values) * 0.3, rtol=1e-12)


class TestFilters(unittest.TestCase):
    def test_filter_bank_seeds(self):
        """Test every filter gets its own weight seed"""
        bank = make_filter_bank(bundled_topology("chain5"), 5, base_seed=10)
        self.assertEqual([f.seed for f in bank], [10, 11, 12, 13, 14])
        self.assertFalse(np.array_equal(bank[0].graph.weights, bank[1].graph.weights))
        self.assertEqual(bank[0].parameter_count, 5)

    def test_zero_angles_ignore_weights(self):
        """Test zero angles give the same value for every filter"""
        bank = make_filter_bank(bundled_topology("chain5"), 3, decoder=Decoder.AGREEMENT)
        values = {round(apply_filter(f, np.zeros(5)), 12) for f in bank}
        self.assertEqual(len(values), 1)

    def test_agreement_matches_closed_form(self):
        """Test the agreement decoder on one edge is the same-state probability"""
        qfilter = pair_filter()
        self.assertAlmostEqual(apply_filter(qfilter, [np.pi / 2, np.pi / 4]), 1.0, places=12)
        self.assertAlmostEqual(apply_filter(qfilter, [0.0, 1.0]), 0.5, places=12)

    def test_ones_decoder_is_flat_in_exact_mode(self):
        """Test every qubit reads 1 with probability one half under the bit-flip symmetry"""
        for seed in range(3):
            qfilter = make_filter_bank(bundled_topology("chain5"), 1, base_seed=seed)[0]
            angles = np.random.default_rng(seed).uniform(0, np.pi, size=5)
            self.assertAlmostEqual(apply_filter(qfilter, angles), 0.5, places=12)

    def test_shots_converge_to_exact(self):
        """Test 10^5 shots land within 0.01 of the exact value"""
        for decoder in Decoder:
            qfilter = pair_filter(decoder=decoder, shots=100_000, seed=3)
            angles = [1.1, 0.4]
            exact = apply_filter(qfilter, angles, FilterMode.EXACT)
            sampled = apply_filter(qfilter, angles, FilterMode.SHOTS, block_key=12)
            self.assertLess(abs(exact - sampled), 0.01)

    def test_shots_are_seeded_per_block(self):
        """Test shot sampling depends only on the filter seed and block key"""
        qfilter = pair_filter(shots=200, seed=8)
        angles = [0.9, 0.6]
        first = apply_filter(qfilter, angles, FilterMode.SHOTS, block_key=4)
        self.assertEqual(first, apply_filter(qfilter, angles, FilterMode.SHOTS, block_key=4))

    def test_angle_count_mismatch(self):
        """Test filters need parameter_count angles"""
        with self.assertRaises(ShapeError):
            apply_filter(pair_filter(), [0.1, 0.2, 0.3])


class TestForward(unittest.TestCase):
    def setUp(self):
        """Set up a desk-scale filter bank and image"""
        self.bank = make_filter_bank(bundled_topology("chain5"), 5, base_seed=100, decoder=Decoder.AGREEMENT)
        self.image = np.random.default_rng(1).integers(0, 256, size=(28, 28, 4))

    def test_feature_map_shape_and_range(self):
        """Test a 28x28x4 image through 5 filters gives a 5x5x5 map in [0, 1]"""
        fmap = quanv_forward(self.image, self.bank, group_size=20)
        self.assertEqual(fmap.shape, (5, 5, 5))
        self.assertTrue(np.all((fmap.grid >= 0) & (fmap.grid <= 1)))
        self.assertIsNone(fmap.exact)

    def test_deterministic_and_thread_independent(self):
        """Test identical images give identical maps, serially or threaded"""
        serial = quanv_forward(self.image, self.bank, group_size=20, mode=FilterMode.SHOTS)
        again = quanv_forward(self.image, self.bank, group_size=20, mode=FilterMode.SHOTS)
        threaded = quanv_forward(self.image, self.bank, group_size=20, mode=FilterMode.SHOTS, workers=4)
        np.testing.assert_array_equal(serial.grid, again.grid)
        np.testing.assert_array_equal(serial.grid, threaded.grid)

    def test_single_block_composition(self):
        """Test a one-block image equals apply_filter on its encoding"""
        image = self.image[:5, :5, :]
        fmap = quanv_forward(image, self.bank[:1], group_size=20)
        angles = encode_block(tile_image(image)[0], 20)
        self.assertEqual(fmap.shape, (1, 1, 1))
        self.assertEqual(fmap.grid[0, 0, 0], apply_filter(self.bank[0], angles))

    def test_mixed_banks_rejected(self):
        """Test filters must share a topology"""
        mixed = [self.bank[0], pair_filter()]
        with self.assertRaises(ShapeError):
            quanv_forward(self.image, mixed, group_size=20)

    def test_cache_limits_evaluations(self):
        """Test a mapper answers blocks beyond its budget by nearest neighbor"""
        mapper = DynamicMapper(ComputeBudget(10))
        fmap = quanv_forward(self.image, self.bank, cache=mapper, group_size=20)
        self.assertEqual(int(fmap.exact.sum()), 10)
        self.assertEqual(mapper.exact_count, 10)
        self.assertEqual(mapper.mapped_count, 15)
        full = quanv_forward(self.image, self.bank, group_size=20)
        np.testing.assert_array_equal(fmap.grid[0, :], full.grid[0, :])

    def test_feature_map_validation(self):
        """Test feature grids are three-dimensional"""
        with self.assertRaises(ShapeError):
            FeatureMap(np.zeros((5, 5)))


if __name__ == "__main__":
    unittest.main()
