# src/synth_control/style.py
import logging
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from speech_features.mel import FeatureMatrix, to_log_scale
from synth_control.energy import SynthControlError

# 设置日志
logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3
DEFAULT_STYLE_DIM = 128


@dataclass(frozen=True)
class StyleFusion:
    """逆能量加权的风格融合结果"""
    weights: Tuple[float, ...]
    epsilon: float
    fused: Tuple[float, ...]


def fusion_weights(energies: Sequence[float], epsilon: float = DEFAULT_EPSILON) -> Tuple[float, ...]:
    """w_k = (1/(e_k + ε)) / Σ_j 1/(e_j + ε)，能量越低权重越高"""
    if epsilon <= 0:
        raise SynthControlError(f"epsilon must be > 0, got {epsilon}")
    e = np.asarray(energies, dtype=np.float64)
    if e.ndim != 1 or e.size == 0:
        raise SynthControlError("fusion_weights needs a non-empty list of energies")
    if np.any(~np.isfinite(e)) or np.any(e < 0):
        raise SynthControlError(f"energies must be finite and >= 0: {list(e)}")
    inverse = 1.0 / (e + epsilon)
    return tuple(float(w) for w in inverse / inverse.sum())


def fuse_styles(styles: Sequence[Sequence[float]], weights: Sequence[float]) -> np.ndarray:
    """s_fused = Σ w_k · s_k

    按 s_1 + Σ w_k (s_k − s_1) 计算：权重和为 1 时两者相等，且全部风格相同时结果逐位等于 s_1。
    """
    try:
        matrix = np.asarray(styles, dtype=np.float64)
    except ValueError:
        raise SynthControlError("style vectors must all have the same dimension")
    w = np.asarray(weights, dtype=np.float64)
    if matrix.ndim != 2:
        raise SynthControlError("style vectors must all have the same dimension")
    if w.shape != (matrix.shape[0],):
        raise SynthControlError(f"{w.size} weights for {matrix.shape[0]} style vectors")
    return matrix[0] + w @ (matrix - matrix[0])


def reference_style(features: FeatureMatrix, dim: int = DEFAULT_STYLE_DIM, seed: int = 0) -> np.ndarray:
    """风格编码器替身：时间平均对数梅尔经固定种子投影后取 tanh"""
    log_mel = to_log_scale(features).values.mean(axis=0)
    rng = np.random.default_rng(seed)
    projection = rng.standard_normal((dim, log_mel.size)) / np.sqrt(log_mel.size)
    return np.tanh(projection @ (log_mel / 10.0))
