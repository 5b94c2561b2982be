# src/synth_control/controller.py
import logging
from dataclasses import dataclass, replace
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from config.config_manager import SynthControlConfig
from corpus.dialogue import DialogueHistory
from speech_features.mel import FeatureExtractor
from synth_control.energy import SynthControlError, energy_trajectory, energy_trend, turn_features
from synth_control.record import ControlRecord, emit_control_record
from synth_control.strategy import StrategyDecision, select_strategy
from synth_control.style import StyleFusion, fuse_styles, fusion_weights, reference_style

# 设置日志
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ControlResult:
    decision: StrategyDecision
    fusion: StyleFusion
    record: ControlRecord
    serialized: str


class SynthController:
    """第三阶段：能量轨迹 -> 策略 (α, β) -> 逆能量风格融合 -> 控制记录"""

    def __init__(self, config: Optional[SynthControlConfig] = None,
                 extractor: Optional[FeatureExtractor] = None):
        self.config = config or SynthControlConfig()
        self.extractor = extractor or FeatureExtractor()

    def decide(self, history: DialogueHistory) -> StrategyDecision:
        trajectory = energy_trajectory(history, self.extractor)
        decision = select_strategy(energy_trend(trajectory), self.config.trend_tol)
        return replace(decision, energies=trajectory.energies)

    def fuse(self, history: DialogueHistory, energies: Sequence[float],
             styles: Optional[Dict[int, Sequence[float]]] = None) -> Tuple[StyleFusion, Tuple[int, ...]]:
        """
        按角色过滤历史轮并做风格融合

        Args:
            history: 对话历史
            energies: 与 history.turns 对齐的能量
            styles: 外部风格向量（turn index -> 向量）；缺省时用 reference_style

        Returns:
            (StyleFusion, 参与融合的 turn index)
        """
        roles = set(self.config.style_roles)
        selected = [(turn, e) for turn, e in zip(history.turns, energies) if turn.role in roles]
        if not selected:
            raise SynthControlError(f"no history turns with roles {sorted(roles)} for style fusion")

        vectors = []
        for turn, _ in selected:
            if styles is not None:
                if turn.index not in styles:
                    raise SynthControlError(f"no style vector for turn {turn.index}")
                vectors.append(np.asarray(styles[turn.index], dtype=np.float64))
            else:
                features = turn_features(turn, self.extractor)
                vectors.append(reference_style(features, self.config.style_dim, seed=self.config.style_seed))

        weights = fusion_weights([e for _, e in selected], self.config.epsilon)
        fused = fuse_styles(vectors, weights)
        fusion = StyleFusion(weights=weights, epsilon=self.config.epsilon,
                             fused=tuple(float(v) for v in fused))
        return fusion, tuple(turn.index for turn, _ in selected)

    def run(self, history: DialogueHistory, response_text: str,
            styles: Optional[Dict[int, Sequence[float]]] = None,
            run_config: Optional[Dict[str, Any]] = None) -> ControlResult:
        decision = self.decide(history)
        energy_by_turn = dict(zip((t.index for t in history.turns), decision.energies))
        fusion, indices = self.fuse(history, decision.energies, styles)
        decision = replace(decision, weights=fusion.weights, fused_style=fusion.fused)

        record, serialized = emit_control_record(
            response_text, decision, fusion,
            energies=[energy_by_turn[i] for i in indices],
            turn_indices=indices,
            run_config=run_config,
        )
        logger.info(f"Dialogue {history.dialogue_id}: strategy={decision.strategy} "
                    f"delta_e={decision.delta_e:.6g} alpha={decision.alpha} beta={decision.beta}")
        return ControlResult(decision, fusion, record, serialized)
