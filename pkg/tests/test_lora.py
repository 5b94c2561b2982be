# tests/test_lora.py
import os
import sys
import unittest

import torch

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from config.config_manager import PartialAdapterConfig
from affect_context.attention import SPEECH, EmbeddingSequence, ShapeError
from fusion_gen.lora import LowRankDelta, PartialLoRALinear, lora_parameters, partial_low_rank_forward


class TestPartialLowRank(unittest.TestCase):
    """PLoRA 测试：增量只作用于语音位置"""

    def setUp(self):
        torch.manual_seed(0)
        self.cfg = PartialAdapterConfig(rank=4, alpha=8.0, dropout=0.0)
        self.layer = PartialLoRALinear(8, 8, self.cfg, seed=1)
        self.x = torch.randn(6, 8)

    def _activate(self):
        with torch.no_grad():
            self.layer.delta.lora_B.normal_()

    def test_all_false_mask_equals_base(self):
        self._activate()
        mask = torch.zeros(6, dtype=torch.bool)
        out = partial_low_rank_forward(self.x, mask, self.layer.base, self.layer.delta)
        self.assertTrue(torch.equal(out, self.layer.base(self.x)))

    def test_zero_up_projection_is_inert(self):
        mask = torch.ones(6, dtype=torch.bool)
        out = partial_low_rank_forward(self.x, mask, self.layer.base, self.layer.delta)
        self.assertTrue(torch.equal(out, self.layer.base(self.x)))

    def test_unmasked_positions_bitwise_base(self):
        self._activate()
        mask = torch.tensor([True, False, True, False, False, True])
        out = self.layer(self.x, mask)
        base = self.layer.base(self.x)
        self.assertTrue(torch.equal(out[~mask], base[~mask]))
        self.assertFalse(torch.allclose(out[mask], base[mask]))

    def test_dense_equivalence(self):
        """rank = d 时可精确复现任意稠密增量"""
        d = 8
        cfg = PartialAdapterConfig(rank=d, alpha=2.0, dropout=0.0)
        delta = LowRankDelta(d, d, cfg, seed=2)
        dense = torch.randn(d, d, dtype=torch.float64)
        delta = delta.double()
        with torch.no_grad():
            delta.lora_A.copy_(torch.eye(d, dtype=torch.float64))
            delta.lora_B.copy_(dense / cfg.scaling)
        base = torch.nn.Linear(d, d).double()
        x = torch.randn(5, d, dtype=torch.float64)
        out = partial_low_rank_forward(x, torch.ones(5, dtype=torch.bool), base, delta)
        torch.testing.assert_close(out, base(x) + x @ dense.T, atol=1e-6, rtol=0)

    def test_embedding_sequence_in_and_out(self):
        seq = EmbeddingSequence(self.x, SPEECH, (0, 3))
        out = partial_low_rank_forward(seq, torch.zeros(6, dtype=torch.bool), self.layer.base, self.layer.delta)
        self.assertIsInstance(out, EmbeddingSequence)
        self.assertEqual(out.turn_boundaries, (0, 3))

    def test_mask_length_mismatch(self):
        with self.assertRaises(ShapeError):
            partial_low_rank_forward(self.x, torch.ones(5, dtype=torch.bool), self.layer.base, self.layer.delta)

    def test_scaling_and_parameters(self):
        self.assertEqual(self.layer.delta.scaling, 2.0)
        names = {id(p) for p in lora_parameters(self.layer)}
        self.assertEqual(names, {id(self.layer.delta.lora_A), id(self.layer.delta.lora_B)})
        with self.assertRaises(ShapeError):
            LowRankDelta(4, 4, PartialAdapterConfig(rank=0))


if __name__ == '__main__':
    unittest.main()
