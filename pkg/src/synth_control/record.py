# src/synth_control/record.py
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from synth_control.energy import SynthControlError
from synth_control.strategy import StrategyDecision
from synth_control.style import StyleFusion

# 设置日志
logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
REQUIRED_KEYS = ("version", "text", "strategy", "alpha", "beta", "fused_style", "turns")


class ControlRecordError(SynthControlError):
    """控制记录缺少字段或格式错误"""
    pass


class SchemaVersionError(ControlRecordError):
    """控制记录的 schema 版本不匹配"""
    pass


@dataclass(frozen=True)
class TurnControl:
    """单轮的能量与融合权重"""
    turn: int
    energy: float
    weight: float


@dataclass(frozen=True)
class ControlRecord:
    """交给任意 TTS 后端的控制记录"""
    response_text: str
    strategy: str
    alpha: float
    beta: float
    fused_style: Tuple[float, ...]
    per_turn: Tuple[TurnControl, ...]
    run_config: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {
            "version": SCHEMA_VERSION,
            "text": self.response_text,
            "strategy": self.strategy,
            "alpha": self.alpha,
            "beta": self.beta,
            "fused_style": list(self.fused_style),
            "turns": [{"index": t.turn, "energy": t.energy, "weight": t.weight} for t in self.per_turn],
        }
        if self.run_config is not None:
            data["run_config"] = self.run_config
        return data

    def serialize(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False)


def emit_control_record(text: Optional[str],
                        decision: Optional[StrategyDecision],
                        fusion: Optional[StyleFusion],
                        energies: Optional[Sequence[float]] = None,
                        turn_indices: Optional[Sequence[int]] = None,
                        run_config: Optional[Dict[str, Any]] = None) -> Tuple[ControlRecord, str]:
    """
    组装控制记录并序列化

    Args:
        text: 回复文本
        decision: 策略选择结果
        fusion: 风格融合结果
        energies: 每轮能量（缺省时取 decision.energies）
        turn_indices: 每轮在对话中的序号（缺省为 0..n-1）
        run_config: 嵌入记录的运行配置

    Returns:
        (ControlRecord, JSON 字符串)
    """
    missing: List[str] = []
    if text is None:
        missing.append("text")
    if decision is None:
        missing.append("decision")
    if fusion is None:
        missing.append("fusion")
    if energies is None and decision is not None:
        energies = decision.energies
    if not energies:
        missing.append("energies")
    if missing:
        raise ControlRecordError(f"control record is missing fields: {', '.join(missing)}")

    if len(energies) != len(fusion.weights):
        raise ControlRecordError(f"{len(energies)} energies for {len(fusion.weights)} fusion weights")
    indices = list(turn_indices) if turn_indices is not None else list(range(len(energies)))
    if len(indices) != len(energies):
        raise ControlRecordError(f"{len(indices)} turn indices for {len(energies)} energies")

    record = ControlRecord(
        response_text=text,
        strategy=decision.strategy,
        alpha=decision.alpha,
        beta=decision.beta,
        fused_style=tuple(float(v) for v in fusion.fused),
        per_turn=tuple(TurnControl(int(i), float(e), float(w))
                       for i, e, w in zip(indices, energies, fusion.weights)),
        run_config=run_config,
    )
    return record, record.serialize()


def parse_control_record(text: str) -> ControlRecord:
    """解析 JSON 控制记录并检查 schema 版本"""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ControlRecordError(f"control record is not valid JSON: {e}")
    if not isinstance(data, dict):
        raise ControlRecordError("control record must be a JSON object")

    version = data.get("version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionError(f"unsupported control record version {version!r}, expected {SCHEMA_VERSION}")

    missing = [key for key in REQUIRED_KEYS if key not in data]
    if missing:
        raise ControlRecordError(f"control record is missing fields: {', '.join(missing)}")

    try:
        per_turn = tuple(TurnControl(int(t["index"]), float(t["energy"]), float(t["weight"]))
                         for t in data["turns"])
    except (KeyError, TypeError, ValueError) as e:
        raise ControlRecordError(f"malformed turns entry: {e}")

    return ControlRecord(
        response_text=data["text"],
        strategy=data["strategy"],
        alpha=float(data["alpha"]),
        beta=float(data["beta"]),
        fused_style=tuple(float(v) for v in data["fused_style"]),
        per_turn=per_turn,
        run_config=data.get("run_config"),
    )
