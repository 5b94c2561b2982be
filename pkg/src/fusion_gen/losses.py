# src/fusion_gen/losses.py
import logging
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Union

import torch

# 设置日志
logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


class LossError(Exception):
    """损失计算错误"""
    pass


@dataclass
class LossReport:
    """单步损失报告"""
    ce: float
    kl: float
    total: float
    n_valid: int
    temperature: float
    weight: float
    grad_norm: float = 0.0
    grad_norm_raw: float = 0.0
    step: int = 0

    def to_log_record(self) -> Dict[str, Any]:
        """训练日志行 {step, ce, kl, total, grad_norm}"""
        return {
            "step": self.step,
            "ce": self.ce,
            "kl": self.kl,
            "total": self.total,
            "grad_norm": self.grad_norm,
        }

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _valid(valid_mask: torch.Tensor, length: int) -> torch.Tensor:
    mask = torch.as_tensor(valid_mask, dtype=torch.bool)
    if mask.shape != (length,):
        raise LossError(f"valid mask shape {tuple(mask.shape)} != ({length},)")
    if not bool(mask.any()):
        raise LossError("no valid targets")
    return mask


def ce_loss(dists: torch.Tensor, targets: torch.Tensor, valid_mask: torch.Tensor,
            floor: float = PROB_FLOOR) -> torch.Tensor:
    """交叉熵 −(1/|V|) Σ_{t∈V} log p(y_t)

    Args:
        dists: [n, vocab] 概率分布
        targets: [n] 目标 token
        valid_mask: [n] 有效位置（仅回复 token）
    """
    mask = _valid(valid_mask, dists.shape[0])
    picked = dists.gather(-1, targets.long().unsqueeze(-1)).squeeze(-1)
    nll = -torch.log(picked.clamp_min(floor))
    return nll[mask].sum() / mask.sum()


def soften(dists: torch.Tensor, temperature: float, floor: float = PROB_FLOOR) -> torch.Tensor:
    """温度软化后的对数概率：log_softmax(log p / T)"""
    return torch.log_softmax(torch.log(dists.clamp_min(floor)) / temperature, dim=-1)


def kl_distill_loss(p_spch: torch.Tensor, p_text: torch.Tensor, valid_mask: torch.Tensor,
                    temperature: float = 2.0, direction: str = "speech_text",
                    floor: float = PROB_FLOOR) -> torch.Tensor:
    """蒸馏损失 (1/|V|) Σ KL(p_spch^(T) ‖ p_text^(T))，文本路径为教师（梯度截断）

    direction="text_speech" 时计算 KL(p_text^(T) ‖ p_spch^(T))，用于消融。
    损失不乘 T²。
    """
    if temperature <= 0:
        raise LossError(f"temperature must be > 0, got {temperature}")
    if p_spch.shape != p_text.shape:
        raise LossError(f"distribution shapes differ: {tuple(p_spch.shape)} vs {tuple(p_text.shape)}")
    mask = _valid(valid_mask, p_spch.shape[0])

    log_s = soften(p_spch, temperature, floor)
    log_t = soften(p_text.detach(), temperature, floor)
    if direction == "speech_text":
        per_position = (log_s.exp() * (log_s - log_t)).sum(-1)
    elif direction == "text_speech":
        per_position = (log_t.exp() * (log_t - log_s)).sum(-1)
    else:
        raise LossError(f"Unknown KL direction: {direction}")
    return per_position[mask].sum() / mask.sum()


def total_loss(ce: Union[torch.Tensor, float], kl: Union[torch.Tensor, float],
               weight: float = 1.0) -> Union[torch.Tensor, float]:
    """L_total = L_CE + λ·L_KL（λ=1 即无权重）"""
    return ce + weight * kl
