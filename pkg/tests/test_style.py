# tests/test_style.py
import os
import sys
import random
import unittest

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from speech_features.mel import LINEAR_POWER, FeatureMatrix
from synth_control.energy import SynthControlError
from synth_control.style import fuse_styles, fusion_weights, reference_style


class TestFusionWeights(unittest.TestCase):
    """逆能量权重测试"""

    def test_hand_example(self):
        weights = fusion_weights([1.0, 3.0], epsilon=1.0)
        self.assertAlmostEqual(weights[0], 2.0 / 3.0, places=12)
        self.assertAlmostEqual(weights[1], 1.0 / 3.0, places=12)

    def test_matches_brute_force(self):
        rng = random.Random(1)
        for _ in range(1000):
            n = rng.randint(1, 20)
            energies = [rng.uniform(0.0, 5.0) for _ in range(n)]
            inverse = [1.0 / (e + 1e-3) for e in energies]
            expected = [v / sum(inverse) for v in inverse]
            weights = fusion_weights(energies, 1e-3)
            self.assertAlmostEqual(sum(weights), 1.0, delta=1e-9)
            for got, want in zip(weights, expected):
                self.assertAlmostEqual(got, want, delta=1e-12)

    def test_lower_energy_higher_weight(self):
        weights = fusion_weights([0.2, 0.8, 0.5])
        self.assertGreater(weights[0], weights[2])
        self.assertGreater(weights[2], weights[1])

    def test_equal_energies_uniform(self):
        self.assertEqual(fusion_weights([0.0, 0.0, 0.0, 0.0]), (0.25, 0.25, 0.25, 0.25))
        self.assertEqual(fusion_weights([7.0]), (1.0,))

    def test_invalid_inputs(self):
        with self.assertRaises(SynthControlError):
            fusion_weights([], 1e-3)
        with self.assertRaises(SynthControlError):
            fusion_weights([1.0], 0.0)
        with self.assertRaises(SynthControlError):
            fusion_weights([1.0, -1.0])
        with self.assertRaises(SynthControlError):
            fusion_weights([float("inf")])


class TestFuseStyles(unittest.TestCase):
    """风格融合测试"""

    def test_weighted_sum(self):
        fused = fuse_styles([[1.0, 0.0], [0.0, 1.0]], [0.75, 0.25])
        np.testing.assert_allclose(fused, [0.75, 0.25])

    def test_inside_convex_hull(self):
        rng = np.random.default_rng(2)
        styles = rng.normal(size=(5, 4))
        fused = fuse_styles(styles, fusion_weights(rng.uniform(0, 2, size=5)))
        self.assertTrue(np.all(fused <= styles.max(axis=0) + 1e-12))
        self.assertTrue(np.all(fused >= styles.min(axis=0) - 1e-12))

    def test_identical_styles_exact(self):
        """全部风格相同时融合结果逐位等于该风格"""
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(1, 8))
            s = rng.normal(size=16)
            weights = fusion_weights(rng.uniform(0, 5, size=n), 1e-3)
            fused = fuse_styles([s] * n, weights)
            self.assertTrue(np.array_equal(fused, s))

    def test_mismatches(self):
        with self.assertRaises(SynthControlError):
            fuse_styles([[1.0, 2.0], [1.0]], [0.5, 0.5])
        with self.assertRaises(SynthControlError):
            fuse_styles([[1.0, 2.0], [3.0, 4.0]], [1.0])


class TestReferenceStyle(unittest.TestCase):
    """风格编码器替身测试"""

    def setUp(self):
        values = np.random.default_rng(3).uniform(0.1, 2.0, size=(10, 16))
        self.features = FeatureMatrix(values, 100.0, LINEAR_POWER)

    def test_shape_range_and_determinism(self):
        style = reference_style(self.features, dim=32, seed=5)
        self.assertEqual(style.shape, (32,))
        self.assertTrue(np.all(np.abs(style) < 1.0))
        np.testing.assert_array_equal(style, reference_style(self.features, dim=32, seed=5))
        self.assertFalse(np.allclose(style, reference_style(self.features, dim=32, seed=6)))


if __name__ == '__main__':
    unittest.main()
