# tests/test_audio.py
import os
import sys
import tempfile
import unittest

import numpy as np
import soundfile as sf

sys.path.append(os.path.join(os.path.dirname(__file__), '..', 'src'))

from speech_features.audio import AudioError, Waveform, load_wav, save_wav


class TestWaveform(unittest.TestCase):
    """波形类型测试"""

    def test_validation(self):
        with self.assertRaises(AudioError):
            Waveform(np.zeros(10), sample_rate=0)
        with self.assertRaises(AudioError):
            Waveform(np.zeros((10, 2)))

    def test_duration_and_scaling(self):
        wave = Waveform(np.full(8000, 0.25))
        self.assertEqual(wave.duration, 0.5)
        np.testing.assert_array_equal(wave.scaled(2.0).samples, np.full(8000, 0.5))


class TestWavIO(unittest.TestCase):
    """WAV 读写测试"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def _path(self, name):
        return os.path.join(self.tmp.name, name)

    def test_pcm16_round_trip(self):
        samples = 0.5 * np.sin(2 * np.pi * 220.0 * np.arange(1600) / 16000)
        save_wav(self._path("a.wav"), Waveform(samples))
        loaded = load_wav(self._path("a.wav"))
        self.assertEqual(loaded.sample_rate, 16000)
        np.testing.assert_allclose(loaded.samples, samples, atol=1.0 / 32768)

    def test_stereo_is_averaged_with_warning(self):
        left = np.full(400, 0.5)
        right = np.full(400, -0.25)
        sf.write(self._path("stereo.wav"), np.stack([left, right], axis=1), 16000, subtype="PCM_16")
        with self.assertLogs("speech_features.audio", level="WARNING"):
            loaded = load_wav(self._path("stereo.wav"))
        np.testing.assert_allclose(loaded.samples, np.full(400, 0.125), atol=1.0 / 32768)

    def test_resampling_to_target_rate(self):
        sf.write(self._path("slow.wav"), np.zeros(8000), 8000, subtype="PCM_16")
        loaded = load_wav(self._path("slow.wav"), target_sample_rate=16000)
        self.assertEqual(loaded.sample_rate, 16000)
        self.assertEqual(len(loaded.samples), 16000)

    def test_clipping_warning(self):
        with self.assertLogs("speech_features.audio", level="WARNING"):
            save_wav(self._path("loud.wav"), Waveform(np.array([1.5, -2.0, 0.0])))
        loaded = load_wav(self._path("loud.wav"))
        self.assertLessEqual(np.max(np.abs(loaded.samples)), 1.0)

    def test_unreadable_file(self):
        with open(self._path("bad.wav"), "wb") as fh:
            fh.write(b"RIFF0000")
        with self.assertRaises(AudioError):
            load_wav(self._path("bad.wav"))
        with self.assertRaises(AudioError):
            load_wav(self._path("missing.wav"))


if __name__ == '__main__':
    unittest.main()
