# src/affect_context/attention.py
import math
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch
import torch.nn as nn

from config.config_manager import AttentionConfig

# 设置日志
logger = logging.getLogger(__name__)

SPEECH = "speech"
TEXT = "text"
FUSED = "fused"
MODALITIES = (SPEECH, TEXT, FUSED)


class ShapeError(Exception):
    """张量形状或维度不匹配"""
    pass


@dataclass
class EmbeddingSequence:
    """共享隐空间中的 L×d 序列，带模态标签和轮次边界（每轮起始下标）"""
    values: torch.Tensor
    modality: str = SPEECH
    turn_boundaries: Tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        if self.values.dim() != 2 or self.values.shape[0] < 1:
            raise ShapeError(f"EmbeddingSequence must be L x d with L >= 1, got {tuple(self.values.shape)}")
        if self.modality not in MODALITIES:
            raise ShapeError(f"Unknown modality: {self.modality}")
        bounds = tuple(int(b) for b in self.turn_boundaries)
        if not bounds or bounds[0] != 0:
            raise ShapeError("turn_boundaries must start at 0")
        if any(b >= a for a, b in zip(bounds[1:], bounds[:-1])) or bounds[-1] >= self.length:
            raise ShapeError(f"turn_boundaries {bounds} do not partition a sequence of length {self.length}")
        self.turn_boundaries = bounds

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def turn_spans(self) -> List[Tuple[int, int]]:
        """每轮的 [start, end) 区间"""
        ends = list(self.turn_boundaries[1:]) + [self.length]
        return list(zip(self.turn_boundaries, ends))

    def with_values(self, values: torch.Tensor, modality: Optional[str] = None) -> "EmbeddingSequence":
        """替换数值（长度不变时保留边界）"""
        bounds = self.turn_boundaries if values.shape[0] == self.length else (0,)
        return EmbeddingSequence(values, modality or self.modality, bounds)


def init_uniform_(module: nn.Module, seed: int) -> nn.Module:
    """按记录的种子做缩放均匀初始化：U(-1/sqrt(fan_in), 1/sqrt(fan_in))，偏置同尺度"""
    generator = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, param in module.named_parameters():
            if param.dim() >= 2:
                fan_in = param[0].numel()
                bound = 1.0 / math.sqrt(fan_in)
            elif name.endswith("bias"):
                bound = 0.0
            else:
                # LayerNorm 权重等
                continue
            values = torch.rand(param.shape, generator=generator, dtype=torch.float64)
            param.copy_((values * 2.0 - 1.0) * bound)
    return module


def attend(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, n_heads: int,
           causal: bool = False) -> Tuple[torch.Tensor, torch.Tensor]:
    """多头缩放点积注意力 softmax(QKᵀ/√d_h)V

    Args:
        q: [B, Lq, d]
        k, v: [B, Lk, d]
        n_heads: 头数
        causal: 是否加因果掩码

    Returns:
        (输出 [B, Lq, d], 注意力权重 [B, H, Lq, Lk])
    """
    batch, len_q, dim = q.shape
    len_k = k.shape[1]
    head_dim = dim // n_heads

    qh = q.view(batch, len_q, n_heads, head_dim).transpose(1, 2)
    kh = k.view(batch, len_k, n_heads, head_dim).transpose(1, 2)
    vh = v.view(batch, len_k, n_heads, head_dim).transpose(1, 2)

    scores = qh @ kh.transpose(-2, -1) / math.sqrt(head_dim)
    if causal:
        mask = torch.ones(len_q, len_k, dtype=torch.bool, device=q.device).triu(1 + len_k - len_q)
        scores = scores.masked_fill(mask, float("-inf"))
    weights = torch.softmax(scores, dim=-1)
    out = (weights @ vh).transpose(1, 2).reshape(batch, len_q, dim)
    return out, weights


class MultiHeadAttention(nn.Module):
    """多头注意力；key_value 为空时即自注意力（MHSA）"""

    def __init__(self, model_dim: int, n_heads: int, seed: int = 42):
        super().__init__()
        if n_heads < 1 or model_dim % n_heads != 0:
            raise ShapeError(f"model_dim {model_dim} is not divisible by n_heads {n_heads}")
        self.model_dim = model_dim
        self.n_heads = n_heads
        self.q_proj = nn.Linear(model_dim, model_dim)
        self.k_proj = nn.Linear(model_dim, model_dim)
        self.v_proj = nn.Linear(model_dim, model_dim)
        self.o_proj = nn.Linear(model_dim, model_dim)
        init_uniform_(self, seed)

    @classmethod
    def from_config(cls, cfg: AttentionConfig, seed_offset: int = 0) -> "MultiHeadAttention":
        return cls(cfg.model_dim, cfg.n_heads, cfg.seed + seed_offset)

    def forward(self, query: torch.Tensor, key_value: Optional[torch.Tensor] = None,
                need_weights: bool = False):
        unbatched = query.dim() == 2
        if key_value is None:
            key_value = query
        if unbatched:
            query, key_value = query.unsqueeze(0), key_value.unsqueeze(0)
        if query.shape[-1] != self.model_dim or key_value.shape[-1] != self.model_dim:
            raise ShapeError(
                f"Attention expects dim {self.model_dim}, got query {query.shape[-1]} / key {key_value.shape[-1]}"
            )

        readout, weights = attend(self.q_proj(query), self.k_proj(key_value), self.v_proj(key_value), self.n_heads)
        out = self.o_proj(readout)
        if unbatched:
            out, weights = out.squeeze(0), weights.squeeze(0)
        return (out, weights) if need_weights else out


def mhsa(x: EmbeddingSequence, cfg: AttentionConfig, params: MultiHeadAttention) -> EmbeddingSequence:
    """多头自注意力（无掩码，全双向）"""
    if x.dim != cfg.model_dim or params.model_dim != cfg.model_dim or params.n_heads != cfg.n_heads:
        raise ShapeError(f"mhsa: input dim {x.dim} / params {params.model_dim}x{params.n_heads} "
                         f"do not match config {cfg.model_dim}x{cfg.n_heads}")
    return x.with_values(params(x.values))


def intra_turn_attention(turn: EmbeddingSequence, cfg: AttentionConfig,
                         params: MultiHeadAttention) -> EmbeddingSequence:
    """轮内注意力：单轮（已下采样并投影的）特征上的 MHSA"""
    if turn.length < 1:
        raise ShapeError("intra_turn_attention on an empty turn")
    return mhsa(EmbeddingSequence(turn.values, turn.modality), cfg, params)


def concat_history(turns: Sequence[EmbeddingSequence]) -> EmbeddingSequence:
    """按时间顺序拼接各轮表示，记录每轮起始位置"""
    if not turns:
        raise ShapeError("concat_history needs at least one turn")
    dims = {t.dim for t in turns}
    if len(dims) != 1:
        raise ShapeError(f"concat_history: turns have different dims {sorted(dims)}")

    boundaries, offset = [], 0
    for turn in turns:
        boundaries.append(offset)
        offset += turn.length
    values = torch.cat([t.values for t in turns], dim=0)
    return EmbeddingSequence(values, turns[0].modality, tuple(boundaries))


def inter_turn_attention(history: EmbeddingSequence, cfg: AttentionConfig,
                         params: MultiHeadAttention) -> EmbeddingSequence:
    """轮间注意力：拼接后历史上的 MHSA，保留轮次边界"""
    return mhsa(history, cfg, params)
