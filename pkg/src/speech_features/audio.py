# src/speech_features/audio.py
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import soundfile as sf
import torch
import torchaudio

# 设置日志
logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 16000


class AudioError(Exception):
    """音频输入错误"""
    pass


@dataclass(frozen=True)
class Waveform:
    """单声道波形，幅度范围 [-1, 1]"""
    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioError(f"sample_rate must be > 0, got {self.sample_rate}")
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise AudioError(f"Waveform must be mono (1-D), got shape {samples.shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def scaled(self, gain: float) -> "Waveform":
        """返回幅度整体缩放后的波形"""
        return Waveform(self.samples * gain, self.sample_rate)


def load_wav(path: str, target_sample_rate: Optional[int] = DEFAULT_SAMPLE_RATE) -> Waveform:
    """读取 WAV 文件

    立体声会被平均为单声道并记录警告；采样率与目标不一致时重采样。

    Args:
        path: WAV 文件路径
        target_sample_rate: 目标采样率，None 表示保持原样

    Returns:
        Waveform 对象
    """
    try:
        data, sample_rate = sf.read(path, dtype="float64", always_2d=True)
    except (RuntimeError, OSError) as e:
        raise AudioError(f"Cannot read audio file {path}: {e}")

    if data.shape[1] > 1:
        logger.warning(f"{path}: {data.shape[1]} channels averaged to mono")
    samples = data.mean(axis=1)

    if target_sample_rate and sample_rate != target_sample_rate:
        logger.info(f"{path}: resampling {sample_rate} Hz -> {target_sample_rate} Hz")
        resampled = torchaudio.functional.resample(
            torch.from_numpy(samples), orig_freq=sample_rate, new_freq=target_sample_rate
        )
        samples = resampled.numpy()
        sample_rate = target_sample_rate

    return Waveform(samples, int(sample_rate))


def save_wav(path: str, waveform: Waveform) -> None:
    """以 16 位 PCM 单声道写出 WAV"""
    clipped = np.clip(waveform.samples, -1.0, 1.0)
    if not np.array_equal(clipped, waveform.samples):
        logger.warning(f"{path}: samples clipped to [-1, 1] before PCM16 encoding")
    sf.write(path, clipped, waveform.sample_rate, subtype="PCM_16")
