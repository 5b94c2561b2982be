# src/affect_context/encoder.py
import logging
from typing import List, Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from config.config_manager import AttentionConfig, EncoderConfig, AdapterConfig
from affect_context.attention import (
    EmbeddingSequence, MultiHeadAttention, ShapeError, SPEECH,
    concat_history, init_uniform_, inter_turn_attention, intra_turn_attention,
)
from affect_context.adapter import ModalityAdapter, modality_adapter
from speech_features.mel import FeatureMatrix

# 设置日志
logger = logging.getLogger(__name__)


class SpeechEncoderStandIn(nn.Module):
    """通用语音编码器替身：pre-norm Transformer 编码块堆叠，depth=0 时为恒等映射"""

    def __init__(self, model_dim: int, n_heads: int, cfg: Optional[EncoderConfig] = None, seed: int = 42):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.layers = nn.ModuleList(
            nn.TransformerEncoderLayer(
                d_model=model_dim,
                nhead=n_heads,
                dim_feedforward=self.cfg.ff_dim,
                dropout=0.0,
                activation="gelu",
                batch_first=True,
                norm_first=True,
            )
            for _ in range(self.cfg.depth)
        )
        init_uniform_(self, seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        unbatched = x.dim() == 2
        if unbatched:
            x = x.unsqueeze(0)
        for layer in self.layers:
            x = layer(x)
        return x.squeeze(0) if unbatched else x


def speech_encoder(h_inter: EmbeddingSequence, params: SpeechEncoderStandIn) -> EmbeddingSequence:
    """把轮间注意力输出送入语音编码器（长度不变）"""
    out = params(h_inter.values)
    if out.shape[0] != h_inter.length:
        raise ShapeError(f"speech_encoder changed length {h_inter.length} -> {out.shape[0]}")
    return h_inter.with_values(out)


class AffectContextEncoder(nn.Module):
    """第一阶段：前置双层情感注意力 + 编码器 + 模态适配器"""

    def __init__(self,
                 n_mels: int,
                 attention: Optional[AttentionConfig] = None,
                 encoder: Optional[EncoderConfig] = None,
                 adapter: Optional[AdapterConfig] = None,
                 use_dual_attention: bool = True):
        """初始化第一阶段模块

        Args:
            n_mels: 输入特征维度
            attention: 注意力配置
            encoder: 编码器替身配置
            adapter: 适配器配置
            use_dual_attention: False 时跳过轮内/轮间注意力（消融）
        """
        super().__init__()
        self.attention_cfg = attention or AttentionConfig()
        self.encoder_cfg = encoder or EncoderConfig()
        self.adapter_cfg = adapter or AdapterConfig()
        self.use_dual_attention = use_dual_attention
        cfg, seed = self.attention_cfg, self.attention_cfg.seed

        self.input_proj = nn.Linear(n_mels, cfg.model_dim)
        self.position_embedding = nn.Embedding(cfg.max_positions, cfg.model_dim)
        self.turn_embedding = nn.Embedding(cfg.max_turns, cfg.model_dim)
        init_uniform_(self.input_proj, seed)
        init_uniform_(self.position_embedding, seed + 1)
        init_uniform_(self.turn_embedding, seed + 2)

        self.intra_attention = MultiHeadAttention.from_config(cfg, seed_offset=3)
        self.inter_attention = MultiHeadAttention.from_config(cfg, seed_offset=4)
        self.encoder = SpeechEncoderStandIn(cfg.model_dim, cfg.n_heads, self.encoder_cfg, seed + 5)
        self.adapter = ModalityAdapter(self.adapter_cfg, seed + 6)

        if not self.encoder_cfg.trainable:
            for p in self.encoder.parameters():
                p.requires_grad = False

    def embed_turn(self, frames: torch.Tensor) -> EmbeddingSequence:
        """单轮：线性投影 + 绝对位置嵌入"""
        if frames.dim() != 2 or frames.shape[0] < 1:
            raise ShapeError(f"Turn features must be non-empty T x d, got {tuple(frames.shape)}")
        if frames.shape[0] > self.attention_cfg.max_positions:
            raise ShapeError(f"Turn of {frames.shape[0]} frames exceeds max_positions {self.attention_cfg.max_positions}")
        positions = torch.arange(frames.shape[0])
        values = self.input_proj(frames) + self.position_embedding(positions)
        return EmbeddingSequence(values, SPEECH)

    def history(self, turn_frames: Sequence[torch.Tensor]) -> EmbeddingSequence:
        """H^hist（含轮次嵌入前的拼接结果）"""
        turns = []
        for frames in turn_frames:
            turn = self.embed_turn(frames)
            if self.use_dual_attention:
                turn = intra_turn_attention(turn, self.attention_cfg, self.intra_attention)
            turns.append(turn)
        return concat_history(turns)

    def forward(self, turn_frames: Sequence[torch.Tensor]) -> EmbeddingSequence:
        """turn_frames: 每轮 [T_k, n_mels] 的（下采样、取对数后）特征 -> E_spch"""
        if len(turn_frames) > self.attention_cfg.max_turns:
            raise ShapeError(f"{len(turn_frames)} turns exceed max_turns {self.attention_cfg.max_turns}")
        hist = self.history(turn_frames)

        turn_ids = torch.zeros(hist.length, dtype=torch.long)
        for index, (start, end) in enumerate(hist.turn_spans()):
            turn_ids[start:end] = index
        hist = hist.with_values(hist.values + self.turn_embedding(turn_ids))

        if self.use_dual_attention:
            hist = inter_turn_attention(hist, self.attention_cfg, self.inter_attention)
        encoded = speech_encoder(hist, self.encoder)
        return modality_adapter(encoded, self.adapter_cfg, self.adapter)

    def encode(self, features: Sequence[FeatureMatrix]) -> EmbeddingSequence:
        """从 FeatureMatrix 列表编码（调用方负责下采样与对数压缩）"""
        param = next(self.parameters())
        frames: List[torch.Tensor] = [
            torch.from_numpy(np.ascontiguousarray(f.values)).to(param.dtype) for f in features
        ]
        return self(frames)
