# tests/test_synthetic.py
import os
import sys
import shutil
import tempfile
import unittest

import numpy as np

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from corpus.dialogue import CorpusError, load_corpus
from corpus.synthetic import FALLING, FLAT, RISING, speaker_gains, synth_corpus, write_corpus
from corpus.tokenizer import ByteVocab
from speech_features.mel import FeatureExtractor
from synth_control.energy import energy_trajectory, energy_trend


class TestSynthCorpus(unittest.TestCase):
    """合成语料测试"""

    def setUp(self):
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_profiles_cycle(self):
        dialogues = synth_corpus(6, seed=1)
        profiles = [d.dialogue_id.rsplit("-", 1)[-1] for d in dialogues]
        self.assertEqual(profiles, [FALLING, RISING, FLAT] * 2)
        for dialogue in dialogues:
            self.assertEqual(len(dialogue.turns), 3)
            self.assertEqual(dialogue.target.role, "listener")
            self.assertTrue(all(t.waveform is not None for t in dialogue.turns))
            self.assertIsNone(dialogue.target.waveform)

    def test_reproducible(self):
        first = synth_corpus(3, seed=5)
        second = synth_corpus(3, seed=5)
        for a, b in zip(first, second):
            self.assertEqual(a.dialogue_id, b.dialogue_id)
            self.assertEqual(a.target.text, b.target.text)
            for ta, tb in zip(a.turns, b.turns):
                np.testing.assert_array_equal(ta.waveform.samples, tb.waveform.samples)

    def test_gains(self):
        np.testing.assert_allclose(speaker_gains(FALLING, 3), [0.9, 0.6, 0.3])
        np.testing.assert_allclose(speaker_gains(RISING, 2), [0.3, 0.9])
        np.testing.assert_allclose(speaker_gains(FLAT, 2), [0.6, 0.6])
        with self.assertRaises(CorpusError):
            speaker_gains("wavy", 2)

    def test_invalid_arguments(self):
        with self.assertRaises(CorpusError):
            synth_corpus(0)
        with self.assertRaises(CorpusError):
            synth_corpus(1, n_history_turns=2)
        with self.assertRaises(CorpusError):
            synth_corpus(1, vocab_spec=ByteVocab(size=128))

    def test_write_and_reload_keeps_trends(self):
        dialogues = synth_corpus(3, seed=6)
        manifest = write_corpus(self.temp_dir, dialogues)
        result = load_corpus(manifest)
        self.assertTrue(result.ok)
        self.assertEqual([d.dialogue_id for d in result.dialogues], [d.dialogue_id for d in dialogues])

        extractor = FeatureExtractor()
        trends = [energy_trend(energy_trajectory(d, extractor)) for d in result.dialogues]
        self.assertLess(trends[0], 0.0)
        self.assertGreater(trends[1], 0.0)
        self.assertEqual(trends[2], 0.0)
        self.assertTrue(os.path.exists(result.dialogues[0].turns[0].audio_path))


if __name__ == '__main__':
    unittest.main()
