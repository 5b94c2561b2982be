# src/fusion_gen/cross_attention.py
import logging
from typing import Optional

import torch
import torch.nn as nn

from affect_context.attention import EmbeddingSequence, MultiHeadAttention, ShapeError, FUSED

# 设置日志
logger = logging.getLogger(__name__)


class CrossModalAttention(nn.Module):
    """语音引导的跨模态注意力：语音作 Q，文本作 K/V，带残差"""

    def __init__(self, model_dim: int, n_heads: int, seed: int = 42, enabled: bool = True):
        super().__init__()
        self.attention = MultiHeadAttention(model_dim, n_heads, seed)
        self.enabled = enabled

    @property
    def model_dim(self) -> int:
        return self.attention.model_dim

    def readout(self, speech: torch.Tensor, text: torch.Tensor, need_weights: bool = False):
        """残差之前的注意力读出"""
        return self.attention(speech, text, need_weights=need_weights)

    def forward(self, speech: torch.Tensor, text: torch.Tensor) -> torch.Tensor:
        if not self.enabled:
            return speech
        return speech + self.readout(speech, text)


def cross_modal_attention(e_spch: EmbeddingSequence, e_text: EmbeddingSequence,
                          params: CrossModalAttention) -> EmbeddingSequence:
    """E_fused = E_spch + CrossAttn(E_spch, E_text, E_text)"""
    if e_spch.dim != e_text.dim or e_spch.dim != params.model_dim:
        raise ShapeError(f"cross_modal_attention: speech dim {e_spch.dim}, text dim {e_text.dim}, "
                         f"module dim {params.model_dim}")
    return EmbeddingSequence(params(e_spch.values, e_text.values), FUSED, e_spch.turn_boundaries)
