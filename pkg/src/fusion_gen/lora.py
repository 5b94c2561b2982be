# src/fusion_gen/lora.py
import math
import logging
from typing import Optional, Union

import torch
import torch.nn as nn

from config.config_manager import PartialAdapterConfig
from affect_context.attention import EmbeddingSequence, ShapeError, init_uniform_

# 设置日志
logger = logging.getLogger(__name__)


class LowRankDelta(nn.Module):
    """低秩增量 (α/r)·B·A·dropout(x)，B 零初始化"""

    def __init__(self, in_features: int, out_features: int,
                 cfg: Optional[PartialAdapterConfig] = None, seed: int = 42):
        super().__init__()
        self.cfg = cfg or PartialAdapterConfig()
        if self.cfg.rank < 1:
            raise ShapeError(f"LoRA rank must be >= 1, got {self.cfg.rank}")
        self.scaling = self.cfg.alpha / self.cfg.rank
        self.lora_A = nn.Parameter(torch.empty(self.cfg.rank, in_features))
        self.lora_B = nn.Parameter(torch.zeros(out_features, self.cfg.rank))
        self.dropout = nn.Dropout(self.cfg.dropout)

        generator = torch.Generator().manual_seed(seed)
        bound = 1.0 / math.sqrt(in_features)
        with torch.no_grad():
            self.lora_A.copy_((torch.rand(self.lora_A.shape, generator=generator) * 2 - 1) * bound)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return (self.dropout(x) @ self.lora_A.T) @ self.lora_B.T * self.scaling


class PartialLoRALinear(nn.Module):
    """PLoRA 线性层：只在语音掩码为真的位置叠加低秩增量"""

    def __init__(self, in_features: int, out_features: int,
                 cfg: Optional[PartialAdapterConfig] = None, seed: int = 42):
        super().__init__()
        self.base = nn.Linear(in_features, out_features)
        init_uniform_(self.base, seed)
        self.delta = LowRankDelta(in_features, out_features, cfg, seed + 1)

    def forward(self, x: torch.Tensor, speech_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        base = self.base(x)
        # 文本路径不经过增量
        if speech_mask is None:
            return base
        if speech_mask.shape != x.shape[:-1]:
            raise ShapeError(f"speech_mask shape {tuple(speech_mask.shape)} != positions {tuple(x.shape[:-1])}")
        if not bool(speech_mask.any()):
            return base
        return torch.where(speech_mask.unsqueeze(-1), base + self.delta(x), base)


def partial_low_rank_forward(x: Union[EmbeddingSequence, torch.Tensor],
                             speech_mask: torch.Tensor,
                             base_params: nn.Linear,
                             adapter_params: LowRankDelta) -> Union[EmbeddingSequence, torch.Tensor]:
    """非语音位置严格等于基础投影；语音位置为 base + (α/r)·delta"""
    values = x.values if isinstance(x, EmbeddingSequence) else x
    speech_mask = torch.as_tensor(speech_mask, dtype=torch.bool)
    if speech_mask.dim() != 1 or speech_mask.shape[0] != values.shape[-2]:
        raise ShapeError(f"mask length {speech_mask.shape[0] if speech_mask.dim() else 0} != sequence length {values.shape[-2]}")

    out = base_params(values)
    if bool(speech_mask.any()):
        mask = speech_mask.expand(values.shape[:-1])
        out = torch.where(mask.unsqueeze(-1), out + adapter_params(values), out)
    return x.with_values(out) if isinstance(x, EmbeddingSequence) else out


def lora_parameters(module: nn.Module):
    """模块中全部低秩增量参数"""
    for name, param in module.named_parameters():
        if ".delta." in name or name.startswith("delta."):
            yield param
