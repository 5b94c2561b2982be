# tests/test_model.py
import os
import sys
import unittest

import torch

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from config.config_manager import (
    AdapterConfig, AttentionConfig, EncoderConfig, PartialAdapterConfig, RunConfig, ToyLMConfig,
)
from affect_context.attention import ShapeError
from corpus.synthetic import synth_corpus
from corpus.tokenizer import DEFAULT_VOCAB
from fusion_gen.lora import lora_parameters
from fusion_gen.losses import ce_loss
from fusion_gen.model import ES4RModel, prepare_example
from fusion_gen.toy_lm import SPEECH_PATH, TEXT_PATH, lm_forward
from speech_features.mel import FeatureExtractor


def _small_config():
    config = RunConfig(seed=7)
    config.attention = AttentionConfig(model_dim=32, n_heads=2, seed=7)
    config.encoder = EncoderConfig(depth=1, ff_dim=64)
    config.adapter = AdapterConfig(in_dim=32, hidden_dim=64, out_dim=32)
    config.lm = ToyLMConfig(model_dim=32, n_heads=2, n_layers=1, ff_dim=64, seed=7)
    config.lora = PartialAdapterConfig(rank=4, alpha=8.0, dropout=0.0)
    return config


class TestPrepareExample(unittest.TestCase):
    """样本预处理测试"""

    @classmethod
    def setUpClass(cls):
        cls.dialogue = synth_corpus(1, seed=3)[0]
        cls.extractor = FeatureExtractor()

    def test_spans_cover_history_and_target(self):
        example = prepare_example(self.dialogue, self.extractor)
        text = DEFAULT_VOCAB.decode(example.tokens.tolist())
        h_start, h_end = example.history_span
        t_start, t_end = example.target_span
        self.assertTrue(text[h_start:h_end].startswith("<|im_start|>user\n"))
        self.assertEqual(text[t_start:t_end], self.dialogue.target.text + "<|im_end|>")
        self.assertEqual(t_end, len(example.tokens))

    def test_turn_frames_are_downsampled_log_mel(self):
        example = prepare_example(self.dialogue, self.extractor)
        self.assertEqual(len(example.turn_frames), 3)
        for frames in example.turn_frames:
            # 0.5 s @ 16 kHz, hop 160 -> 51 帧 -> ceil(51 / 4) = 13
            self.assertEqual(tuple(frames.shape), (13, 128))
            self.assertEqual(frames.dtype, torch.float32)

    def test_without_target(self):
        example = prepare_example(self.dialogue, self.extractor, template_format="llama", include_target=False)
        self.assertIsNone(example.target_span)
        self.assertEqual(example.format, "llama")
        text = DEFAULT_VOCAB.decode(example.tokens.tolist())
        self.assertTrue(text.endswith("<|start_header_id|>assistant<|end_header_id|>\n"))


class TestES4RModel(unittest.TestCase):
    """融合模型测试"""

    @classmethod
    def setUpClass(cls):
        cls.example = prepare_example(synth_corpus(1, seed=3)[0], FeatureExtractor())

    def setUp(self):
        self.model = ES4RModel(_small_config())

    def test_speech_inputs_replace_history_with_fused(self):
        start, end = self.example.history_span
        fused = self.model.fuse(self.example)
        inputs, mask = self.model.speech_inputs(self.example, e_fused=fused)
        embedded = self.model.lm.embed(self.example.tokens)

        self.assertEqual(inputs.shape[0], len(self.example.tokens) - (end - start) + fused.length)
        self.assertEqual(mask.nonzero().flatten().tolist(), list(range(start, start + fused.length)))
        torch.testing.assert_close(inputs[:start], embedded[:start])
        torch.testing.assert_close(inputs[start:start + fused.length], fused.values)
        torch.testing.assert_close(inputs[start + fused.length:], embedded[end:])

    def test_forward_aligns_targets(self):
        output = self.model(self.example)
        t_start, t_end = self.example.target_span
        n_target = t_end - t_start
        self.assertEqual(tuple(output.p_spch.shape), (n_target, 256))
        self.assertEqual(tuple(output.p_text.shape), (n_target, 256))
        self.assertTrue(torch.equal(output.targets, self.example.tokens[t_start:t_end]))

    def test_text_path_alignment_matches_direct_forward(self):
        output = self.model(self.example)
        t_start, t_end = self.example.target_span
        h_start, h_end = self.example.history_span
        full_text = lm_forward(self.example.tokens, TEXT_PATH, self.model.lm)
        torch.testing.assert_close(output.p_text, full_text[t_start - 1:t_end - 1])

        fused = self.model.fuse(self.example)
        inputs, mask = self.model.speech_inputs(self.example, e_fused=fused)
        full_speech = lm_forward(inputs, SPEECH_PATH, self.model.lm, mask)
        shift = fused.length - (h_end - h_start)
        torch.testing.assert_close(output.p_spch, full_speech[t_start - 1 + shift:t_end - 1 + shift])
        self.assertEqual(output.speech_length, inputs.shape[0])

    def test_gradients_reach_trainable_modules(self):
        self.model.lm.freeze_base()
        output = self.model(self.example)
        loss = ce_loss(output.p_spch, output.targets, torch.ones(len(output.targets), dtype=torch.bool))
        loss.backward()
        self.assertIsNotNone(self.model.stage1.adapter.convs[0].weight.grad)
        self.assertIsNotNone(self.model.cross.attention.q_proj.weight.grad)
        self.assertTrue(all(p.grad is None for p in self.model.stage1.encoder.parameters()))
        self.assertTrue(all(p.grad is None for p in self.model.lm.head.parameters()))
        self.assertTrue(any(p.grad is not None for p in lora_parameters(self.model.lm)))

    def test_cross_attention_ablation(self):
        config = _small_config()
        config.training.use_cross_attention = False
        model = ES4RModel(config)
        e_spch = model.stage1(self.example.turn_frames)
        self.assertTrue(torch.equal(model.fuse(self.example).values, e_spch.values))

    def test_missing_target_span(self):
        example = prepare_example(synth_corpus(1, seed=3)[0], FeatureExtractor(), include_target=False)
        with self.assertRaises(ShapeError):
            self.model(example)


if __name__ == '__main__':
    unittest.main()
