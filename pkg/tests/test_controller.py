# tests/test_controller.py
import os
import sys
import json
import unittest

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from config.config_manager import SynthControlConfig
from corpus.dialogue import DialogueHistory, Turn
from corpus.synthetic import synth_corpus
from speech_features.mel import LINEAR_POWER, FeatureExtractor, FeatureMatrix
from synth_control.controller import SynthController
from synth_control.energy import SynthControlError
from synth_control.record import parse_control_record


def _features(energy):
    """单帧单带特征，平均能量恰为 energy"""
    return FeatureMatrix(np.array([[energy]]), 100.0, LINEAR_POWER)


def _history(energies):
    roles = ("speaker", "listener")
    turns = [Turn(i, roles[i % 2], f"turn {i}", features=_features(e)) for i, e in enumerate(energies)]
    target = Turn(len(turns), roles[len(turns) % 2], "reply")
    return DialogueHistory("ctrl-001", turns, target)


class TestSynthController(unittest.TestCase):
    """第三阶段控制器测试"""

    def setUp(self):
        self.styles = {0: [1.0, 0.0], 1: [0.0, 1.0], 2: [1.0, 1.0]}

    def test_falling_history(self):
        controller = SynthController(SynthControlConfig(epsilon=1.0))
        result = controller.run(_history([3.0, 2.0, 1.0]), "I'm here.", self.styles)
        self.assertEqual(result.decision.strategy, "comfort")
        self.assertEqual(result.decision.energies, (3.0, 2.0, 1.0))
        self.assertAlmostEqual(result.decision.delta_e, -1.0)
        expected = np.array([1 / 4, 1 / 3, 1 / 2])
        expected = expected / expected.sum()
        np.testing.assert_allclose(result.fusion.weights, expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(result.fusion.fused, expected @ np.array([[1, 0], [0, 1], [1, 1]]))

    def test_rising_and_flat(self):
        controller = SynthController()
        self.assertEqual(controller.run(_history([1.0, 1.0, 2.0]), "Great!", self.styles).record.strategy,
                         "encourage")
        self.assertEqual(controller.run(_history([1.0, 9.0, 1.0]), "Okay.", self.styles).record.strategy,
                         "neutral")

    def test_single_turn_history(self):
        result = SynthController().run(_history([0.4]), "Hello.", {0: [0.3, 0.3]})
        self.assertEqual(result.record.strategy, "neutral")
        self.assertEqual(result.fusion.weights, (1.0,))

    def test_role_filter(self):
        controller = SynthController(SynthControlConfig(style_roles=("speaker",)))
        result = controller.run(_history([3.0, 2.0, 1.0]), "ok", self.styles)
        self.assertEqual([t.turn for t in result.record.per_turn], [0, 2])
        self.assertEqual([t.energy for t in result.record.per_turn], [3.0, 1.0])
        # 趋势仍使用全部历史轮
        self.assertEqual(result.decision.energies, (3.0, 2.0, 1.0))

    def test_missing_style_vector(self):
        with self.assertRaises(SynthControlError):
            SynthController().run(_history([1.0, 2.0, 3.0]), "ok", {0: [1.0]})

    def test_no_turns_match_roles(self):
        controller = SynthController(SynthControlConfig(style_roles=("listener",)))
        with self.assertRaises(SynthControlError):
            controller.run(_history([1.0]), "ok", {0: [1.0]})

    def test_reference_styles_from_audio(self):
        extractor = FeatureExtractor()
        controller = SynthController(SynthControlConfig(style_dim=16), extractor)
        dialogue = synth_corpus(1, seed=8)[0]
        result = controller.run(dialogue, "Take your time.", run_config={"seed": 8})
        self.assertEqual(len(result.record.fused_style), 16)
        self.assertEqual(result.record.strategy, "comfort")
        parsed = parse_control_record(result.serialized)
        self.assertEqual(parsed, result.record)
        self.assertEqual(json.loads(result.serialized)["run_config"], {"seed": 8})

    def test_repeatable(self):
        dialogue = synth_corpus(2, seed=8)[1]
        first = SynthController().run(dialogue, "Nice!").serialized
        second = SynthController().run(dialogue, "Nice!").serialized
        self.assertEqual(first, second)
        self.assertIn('"strategy": "encourage"', first)


if __name__ == '__main__':
    unittest.main()
