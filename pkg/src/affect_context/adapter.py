# src/affect_context/adapter.py
import logging
from typing import Optional

import torch
import torch.nn as nn

from config.config_manager import AdapterConfig
from affect_context.attention import EmbeddingSequence, ShapeError, init_uniform_

# 设置日志
logger = logging.getLogger(__name__)


class AdapterLengthError(ShapeError):
    """序列过短，无法通过适配器"""
    pass


def adapter_output_length(length: int, cfg: Optional[AdapterConfig] = None) -> int:
    """逐层应用 ⌊(L + 2p − k)/s⌋ + 1"""
    cfg = cfg or AdapterConfig()
    for kernel in cfg.kernel_sizes:
        length = (length + 2 * cfg.padding - kernel) // cfg.stride + 1
        if length < 1:
            return 0
    return length


class ModalityAdapter(nn.Module):
    """卷积下采样器：三层 Conv1d（k=5, s=2, p=2），层间 GELU，总下采样 8 倍"""

    def __init__(self, cfg: Optional[AdapterConfig] = None, seed: int = 42):
        super().__init__()
        self.cfg = cfg or AdapterConfig()
        if self.cfg.stride ** len(self.cfg.kernel_sizes) != self.cfg.total_factor:
            raise ShapeError(
                f"Adapter strides {self.cfg.stride}^{len(self.cfg.kernel_sizes)} != total_factor {self.cfg.total_factor}"
            )

        n_layers = len(self.cfg.kernel_sizes)
        dims = [self.cfg.in_dim] + [self.cfg.hidden_dim] * (n_layers - 1) + [self.cfg.out_dim]
        self.convs = nn.ModuleList(
            nn.Conv1d(dims[i], dims[i + 1], kernel_size=k, stride=self.cfg.stride, padding=self.cfg.padding)
            for i, k in enumerate(self.cfg.kernel_sizes)
        )
        self.activation = nn.GELU()
        init_uniform_(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: [L, in_dim] 或 [B, L, in_dim] -> [(B,) L', out_dim]"""
        unbatched = x.dim() == 2
        if unbatched:
            x = x.unsqueeze(0)
        if x.shape[-1] != self.cfg.in_dim:
            raise ShapeError(f"Adapter expects in_dim {self.cfg.in_dim}, got {x.shape[-1]}")
        if adapter_output_length(x.shape[1], self.cfg) < 1:
            raise AdapterLengthError("sequence too short for adapter")

        h = x.transpose(1, 2)
        for i, conv in enumerate(self.convs):
            h = conv(h)
            if i < len(self.convs) - 1:
                h = self.activation(h)
        out = h.transpose(1, 2)
        return out.squeeze(0) if unbatched else out


def modality_adapter(h: EmbeddingSequence, cfg: AdapterConfig, params: ModalityAdapter) -> EmbeddingSequence:
    """把语音表示映射到语言模型嵌入空间"""
    if h.dim != cfg.in_dim:
        raise ShapeError(f"modality_adapter: input dim {h.dim} != in_dim {cfg.in_dim}")
    return EmbeddingSequence(params(h.values), h.modality)
