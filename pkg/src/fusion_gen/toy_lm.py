# src/fusion_gen/toy_lm.py
import logging
from typing import Optional, Union

import torch
import torch.nn as nn

from config.config_manager import ToyLMConfig, PartialAdapterConfig
from affect_context.attention import ShapeError, attend, init_uniform_
from fusion_gen.lora import PartialLoRALinear

# 设置日志
logger = logging.getLogger(__name__)

TEXT_PATH = "text"
SPEECH_PATH = "speech"


class CausalSelfAttention(nn.Module):
    """因果自注意力，q/k/v/o 投影为 PLoRA 线性层"""

    def __init__(self, cfg: ToyLMConfig, lora: PartialAdapterConfig, seed: int):
        super().__init__()
        self.n_heads = cfg.n_heads
        dim = cfg.model_dim
        self.q_proj = PartialLoRALinear(dim, dim, lora, seed)
        self.k_proj = PartialLoRALinear(dim, dim, lora, seed + 10)
        self.v_proj = PartialLoRALinear(dim, dim, lora, seed + 20)
        self.o_proj = PartialLoRALinear(dim, dim, lora, seed + 30)

    def forward(self, x: torch.Tensor, speech_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        q = self.q_proj(x, speech_mask)
        k = self.k_proj(x, speech_mask)
        v = self.v_proj(x, speech_mask)
        out, _ = attend(q, k, v, self.n_heads, causal=True)
        return self.o_proj(out, speech_mask)


class DecoderBlock(nn.Module):
    """pre-norm 解码块"""

    def __init__(self, cfg: ToyLMConfig, lora: PartialAdapterConfig, seed: int):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.model_dim)
        self.attn = CausalSelfAttention(cfg, lora, seed)
        self.ln2 = nn.LayerNorm(cfg.model_dim)
        self.mlp = nn.Sequential(
            nn.Linear(cfg.model_dim, cfg.ff_dim),
            nn.GELU(),
            nn.Linear(cfg.ff_dim, cfg.model_dim),
        )
        init_uniform_(self.mlp, seed + 40)

    def forward(self, x: torch.Tensor, speech_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        x = x + self.attn(self.ln1(x), speech_mask)
        return x + self.mlp(self.ln2(x))


class ToyLM(nn.Module):
    """桌面规模的字节级解码器语言模型（预训练骨干的替身）"""

    def __init__(self, cfg: Optional[ToyLMConfig] = None, lora: Optional[PartialAdapterConfig] = None):
        super().__init__()
        self.cfg = cfg or ToyLMConfig()
        self.lora_cfg = lora or PartialAdapterConfig()
        if self.cfg.vocab_size < 2:
            raise ShapeError(f"vocab_size must be >= 2, got {self.cfg.vocab_size}")
        if self.cfg.model_dim % self.cfg.n_heads != 0:
            raise ShapeError(f"model_dim {self.cfg.model_dim} is not divisible by n_heads {self.cfg.n_heads}")

        seed = self.cfg.seed
        self.token_embedding = nn.Embedding(self.cfg.vocab_size, self.cfg.model_dim)
        self.position_embedding = nn.Embedding(self.cfg.max_len, self.cfg.model_dim)
        init_uniform_(self.token_embedding, seed)
        init_uniform_(self.position_embedding, seed + 1)
        self.blocks = nn.ModuleList(
            DecoderBlock(self.cfg, self.lora_cfg, seed + 100 * (i + 1)) for i in range(self.cfg.n_layers)
        )
        self.ln_f = nn.LayerNorm(self.cfg.model_dim)
        self.head = nn.Linear(self.cfg.model_dim, self.cfg.vocab_size)
        init_uniform_(self.head, seed + 2)

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        """词嵌入（不含位置）"""
        return self.token_embedding(tokens)

    def logits(self, embeddings: torch.Tensor, speech_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
        """embeddings: [L, d] 或 [B, L, d] -> logits"""
        unbatched = embeddings.dim() == 2
        if unbatched:
            embeddings = embeddings.unsqueeze(0)
            if speech_mask is not None:
                speech_mask = speech_mask.unsqueeze(0)
        length = embeddings.shape[1]
        if length > self.cfg.max_len:
            raise ShapeError(f"input length {length} exceeds max_len {self.cfg.max_len}")
        if embeddings.shape[-1] != self.cfg.model_dim:
            raise ShapeError(f"embedding dim {embeddings.shape[-1]} != model_dim {self.cfg.model_dim}")

        x = embeddings + self.position_embedding(torch.arange(length, device=embeddings.device))
        for block in self.blocks:
            x = block(x, speech_mask)
        out = self.head(self.ln_f(x))
        return out.squeeze(0) if unbatched else out

    def base_parameters(self):
        """除低秩增量外的全部参数"""
        for name, param in self.named_parameters():
            if ".delta." not in name:
                yield param

    def freeze_base(self) -> None:
        for param in self.base_parameters():
            param.requires_grad = False


def lm_forward(inputs: torch.Tensor, path: str, model: ToyLM,
               speech_mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    """语言模型前向，返回每个位置的概率分布

    Args:
        inputs: 文本路径为 token 序列；语音路径为已拼接的嵌入序列
        path: text / speech
        model: ToyLM
        speech_mask: 语音路径上语音融合位置的布尔掩码

    Returns:
        [.., L, vocab_size] 概率
    """
    if path == TEXT_PATH:
        if inputs.dtype not in (torch.long, torch.int64, torch.int32):
            raise ShapeError("text path expects token ids")
        if inputs.shape[-1] > model.cfg.max_len:
            raise ShapeError(f"input length {inputs.shape[-1]} exceeds max_len {model.cfg.max_len}")
        logits = model.logits(model.embed(inputs.long()))
    elif path == SPEECH_PATH:
        if speech_mask is None:
            speech_mask = torch.zeros(inputs.shape[:-1], dtype=torch.bool)
        logits = model.logits(inputs, speech_mask.bool())
    else:
        raise ValueError(f"Unknown path: {path}")
    return torch.softmax(logits, dim=-1)
