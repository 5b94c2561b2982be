# src/speech_features/mel.py
import os
import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
import torch
import torchaudio
from cachetools import LRUCache, cached

from config.config_manager import FeatureConfig
from speech_features.audio import Waveform, AudioError, load_wav

# 设置日志
logger = logging.getLogger(__name__)

LINEAR_POWER = "linear-power"
LOG = "log"
LOG_FLOOR = 1e-10


class FeatureError(Exception):
    """特征矩阵错误"""
    pass


@dataclass(frozen=True)
class FeatureMatrix:
    """T×d 时频特征序列"""
    values: np.ndarray
    frame_rate: float
    scale: str = LINEAR_POWER

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise FeatureError(f"FeatureMatrix must be T x d with T, d >= 1, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise FeatureError("FeatureMatrix contains non-finite values")
        if self.scale not in (LINEAR_POWER, LOG):
            raise FeatureError(f"Unknown feature scale: {self.scale}")
        if self.scale == LINEAR_POWER and np.any(values < 0):
            raise FeatureError("Linear-power features must be non-negative")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    def scaled(self, c: float) -> "FeatureMatrix":
        return FeatureMatrix(self.values * abs(c), self.frame_rate, self.scale)


@cached(LRUCache(maxsize=16))
def _mel_transform(sample_rate: int, n_fft: int, win_length: int, hop_length: int,
                   n_mels: int, f_min: float, f_max: Optional[float]) -> torchaudio.transforms.MelSpectrogram:
    """构建（并缓存）float64 梅尔变换"""
    transform = torchaudio.transforms.MelSpectrogram(
        sample_rate=sample_rate,
        n_fft=n_fft,
        win_length=win_length,
        hop_length=hop_length,
        f_min=f_min,
        f_max=f_max,
        n_mels=n_mels,
        power=2.0,
        center=True,
        pad_mode="constant",
        norm=None,
        mel_scale="htk",
    )
    return transform.to(torch.float64)


def extract_features(waveform: Waveform, n_mels: int = 128, frame_hop: int = 160,
                     config: Optional[FeatureConfig] = None) -> FeatureMatrix:
    """提取线性功率梅尔谱

    Args:
        waveform: 输入波形
        n_mels: 梅尔带数
        frame_hop: 帧移（采样点数）
        config: 窗长等其余参数，None 时使用默认 FeatureConfig

    Returns:
        T×n_mels 的 FeatureMatrix，T = 1 + len(samples) // frame_hop

    Raises:
        AudioError: 空音频或非有限采样
    """
    cfg = config or FeatureConfig()
    samples = waveform.samples
    if samples.size == 0:
        raise AudioError("empty audio")
    if not np.all(np.isfinite(samples)):
        raise AudioError("invalid samples")
    if n_mels < 1:
        raise FeatureError(f"n_mels must be >= 1, got {n_mels}")
    if frame_hop < 1:
        raise FeatureError(f"frame_hop must be >= 1, got {frame_hop}")

    transform = _mel_transform(waveform.sample_rate, cfg.n_fft, cfg.win_length, frame_hop,
                               n_mels, cfg.f_min, cfg.f_max)
    with torch.no_grad():
        mel = transform(torch.from_numpy(samples))  # [n_mels, T]
    values = mel.transpose(0, 1).contiguous().numpy()

    return FeatureMatrix(values, frame_rate=waveform.sample_rate / frame_hop, scale=LINEAR_POWER)


def downsample_input(features: FeatureMatrix, factor: int) -> FeatureMatrix:
    """输入侧下采样：按时间不重叠均值池化，T' = ceil(T / factor)"""
    if factor < 1:
        raise FeatureError(f"downsample factor must be >= 1, got {factor}")
    if factor == 1:
        return features

    n_frames = features.n_frames
    starts = np.arange(0, n_frames, factor)
    counts = np.minimum(starts + factor, n_frames) - starts
    pooled = np.add.reduceat(features.values, starts, axis=0) / counts[:, None]
    return FeatureMatrix(pooled, features.frame_rate / factor, features.scale)


def mean_energy(features: Union[FeatureMatrix, np.ndarray]) -> float:
    """平均能量：逐帧 ℓ2 范数在时间上取平均"""
    if isinstance(features, FeatureMatrix):
        if features.scale != LINEAR_POWER:
            raise FeatureError("mean_energy expects linear-power features")
        values = features.values
    else:
        values = np.asarray(features, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise FeatureError("mean_energy of an empty feature matrix")
    return float(np.linalg.norm(values, axis=1).mean())


def to_log_scale(features: FeatureMatrix) -> FeatureMatrix:
    """自然对数压缩（模型输入用；能量始终在线性功率上计算）"""
    if features.scale == LOG:
        return features
    return FeatureMatrix(np.log(np.maximum(features.values, LOG_FLOOR)), features.frame_rate, LOG)


def save_feature_cache(path: str, features: FeatureMatrix) -> None:
    """写出特征缓存文件（.npz：values 行主序 float64、frame_rate、scale、n_mels）"""
    np.savez(
        path,
        values=np.ascontiguousarray(features.values),
        frame_rate=np.float64(features.frame_rate),
        scale=np.array(features.scale),
        n_mels=np.int64(features.n_mels),
    )


def load_feature_cache(path: str) -> FeatureMatrix:
    """读取特征缓存文件"""
    try:
        with np.load(path, allow_pickle=False) as data:
            values = data["values"]
            n_mels = int(data["n_mels"])
            features = FeatureMatrix(values, float(data["frame_rate"]), str(data["scale"]))
    except (OSError, KeyError, ValueError) as e:
        raise FeatureError(f"Invalid feature cache {path}: {e}")
    if features.n_mels != n_mels:
        raise FeatureError(f"Feature cache {path}: header n_mels {n_mels} != matrix width {features.n_mels}")
    return features


class FeatureExtractor:
    """带内存缓存的特征提取器"""

    def __init__(self, config: Optional[FeatureConfig] = None):
        """初始化提取器

        Args:
            config: 特征配置，如果为 None 则使用默认值
        """
        self.config = config or FeatureConfig()
        self.cache: LRUCache = LRUCache(maxsize=self.config.cache_size)

    def extract(self, waveform: Waveform) -> FeatureMatrix:
        return extract_features(waveform, self.config.n_mels, self.config.hop_length, self.config)

    def extract_file(self, path: str) -> FeatureMatrix:
        """读取并提取音频文件特征；按 (路径, 修改时间) 缓存"""
        key: Tuple[str, float] = (os.path.abspath(path), os.path.getmtime(path))
        features = self.cache.get(key)
        if features is None:
            features = self.extract(load_wav(path, self.config.sample_rate))
            self.cache[key] = features
            logger.debug(f"Extracted features for {path}: {features.values.shape}")
        return features

    def model_input(self, features: FeatureMatrix) -> FeatureMatrix:
        """模型输入：下采样后取对数"""
        return to_log_scale(downsample_input(features, self.config.downsample_factor))

    def clear_cache(self) -> None:
        self.cache.clear()
