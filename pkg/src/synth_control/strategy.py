# src/synth_control/strategy.py
import math
import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from synth_control.energy import SynthControlError

# 设置日志
logger = logging.getLogger(__name__)

COMFORT = "comfort"
ENCOURAGE = "encourage"
NEUTRAL = "neutral"

# 策略 -> (α 音素时长缩放, β 情感表现力)
STRATEGY_TABLE: Dict[str, Tuple[float, float]] = {
    COMFORT: (0.85, 1.2),
    ENCOURAGE: (1.0, 1.1),
    NEUTRAL: (0.95, 1.0),
}

DEFAULT_TREND_TOL = 1e-6


@dataclass(frozen=True)
class StrategyDecision:
    """策略选择结果"""
    strategy: str
    delta_e: float
    alpha: float
    beta: float
    energies: Tuple[float, ...] = ()
    weights: Tuple[float, ...] = ()
    fused_style: Optional[Tuple[float, ...]] = None

    def __post_init__(self):
        if STRATEGY_TABLE.get(self.strategy) != (self.alpha, self.beta):
            raise SynthControlError(
                f"(strategy, alpha, beta) = ({self.strategy}, {self.alpha}, {self.beta}) is not in the strategy table"
            )


def select_strategy(delta_e: float, tol: float = DEFAULT_TREND_TOL) -> StrategyDecision:
    """Δ_e < −tol -> comfort；Δ_e > tol -> encourage；否则 neutral"""
    if not math.isfinite(delta_e):
        raise SynthControlError(f"energy trend must be finite, got {delta_e}")
    if tol < 0:
        raise SynthControlError(f"trend tolerance must be >= 0, got {tol}")

    if delta_e < -tol:
        strategy = COMFORT
    elif delta_e > tol:
        strategy = ENCOURAGE
    else:
        strategy = NEUTRAL
    alpha, beta = STRATEGY_TABLE[strategy]
    logger.debug(f"delta_e={delta_e:.6g} -> {strategy} (alpha={alpha}, beta={beta})")
    return StrategyDecision(strategy, float(delta_e), alpha, beta)
