# src/synth_control/energy.py
import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

from corpus.dialogue import DialogueHistory, Turn
from speech_features.mel import FeatureExtractor, FeatureMatrix, mean_energy

# 设置日志
logger = logging.getLogger(__name__)


class SynthControlError(Exception):
    """第三阶段控制错误"""
    pass


@dataclass(frozen=True)
class EnergyTrajectory:
    """对话历史各轮平均能量（按时间顺序）"""
    energies: Tuple[float, ...]
    turn_indices: Tuple[int, ...] = ()

    def __post_init__(self):
        energies = tuple(float(e) for e in self.energies)
        if not energies:
            raise SynthControlError("energy trajectory needs at least one turn")
        if any(not math.isfinite(e) or e < 0 for e in energies):
            raise SynthControlError(f"energies must be finite and >= 0: {energies}")
        object.__setattr__(self, "energies", energies)
        if not self.turn_indices:
            object.__setattr__(self, "turn_indices", tuple(range(len(energies))))

    @property
    def n(self) -> int:
        return len(self.energies)


def turn_features(turn: Turn, extractor: FeatureExtractor) -> FeatureMatrix:
    """按 特征 -> 波形 -> 音频文件 的顺序取得一轮的线性功率特征"""
    if turn.features is not None:
        return turn.features
    if turn.waveform is not None:
        return extractor.extract(turn.waveform)
    if turn.audio_path is not None:
        return extractor.extract_file(turn.audio_path)
    raise SynthControlError(f"turn {turn.index} ({turn.role}) has neither audio nor features")


def energy_trajectory(history: Union[DialogueHistory, Sequence[Turn]],
                      extractor: Optional[FeatureExtractor] = None) -> EnergyTrajectory:
    """从历史音频提取能量轨迹 e_k = mean_energy(X_k)"""
    turns = history.turns if isinstance(history, DialogueHistory) else list(history)
    extractor = extractor or FeatureExtractor()
    energies: List[float] = [mean_energy(turn_features(turn, extractor)) for turn in turns]
    return EnergyTrajectory(tuple(energies), tuple(turn.index for turn in turns))


def energy_trend(trajectory: EnergyTrajectory) -> float:
    """端点斜率 Δ_e = (e_n − e_1)/(n − 1)；n = 1 时为 0"""
    n = trajectory.n
    if n == 1:
        return 0.0
    return (trajectory.energies[-1] - trajectory.energies[0]) / (n - 1)
