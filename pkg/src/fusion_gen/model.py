# src/fusion_gen/model.py
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn

from config.config_manager import RunConfig
from affect_context.attention import EmbeddingSequence, ShapeError, TEXT
from affect_context.encoder import AffectContextEncoder
from corpus.dialogue import DialogueHistory
from corpus.templates import get_format, render_template
from corpus.tokenizer import ByteVocab, DEFAULT_VOCAB
from fusion_gen.cross_attention import CrossModalAttention, cross_modal_attention
from fusion_gen.toy_lm import SPEECH_PATH, TEXT_PATH, ToyLM, lm_forward
from speech_features.mel import FeatureExtractor
from synth_control.energy import turn_features

# 设置日志
logger = logging.getLogger(__name__)


@dataclass
class PreparedExample:
    """一条训练/推理样本：模板 token + 历史区间 + 每轮模型输入特征"""
    dialogue_id: str
    tokens: torch.Tensor
    history_span: Tuple[int, int]
    target_span: Optional[Tuple[int, int]]
    turn_frames: List[torch.Tensor]
    format: str


@dataclass
class DualPathOutput:
    """对齐到目标位置的两条路径分布"""
    p_spch: torch.Tensor
    p_text: torch.Tensor
    targets: torch.Tensor
    speech_length: int


def prepare_example(dialogue: DialogueHistory,
                    extractor: Optional[FeatureExtractor] = None,
                    template_format: str = "qwen",
                    include_target: bool = True,
                    vocab: ByteVocab = DEFAULT_VOCAB,
                    dtype: torch.dtype = torch.float32) -> PreparedExample:
    """渲染模板并提取每个历史轮的（下采样、对数）梅尔特征"""
    extractor = extractor or FeatureExtractor()
    rendered = render_template(dialogue, template_format, include_target=include_target)
    tokens = torch.tensor(vocab.encode(rendered.text), dtype=torch.long)
    history_span = vocab.char_span_to_token_span(rendered.text, rendered.history_span)
    target_span = None
    if rendered.target_span is not None:
        target_span = vocab.char_span_to_token_span(rendered.text, rendered.target_span)

    frames = []
    for turn in dialogue.turns:
        features = extractor.model_input(turn_features(turn, extractor))
        frames.append(torch.from_numpy(np.ascontiguousarray(features.values)).to(dtype))
    return PreparedExample(dialogue.dialogue_id, tokens, history_span, target_span, frames, rendered.format)


class ES4RModel(nn.Module):
    """第一阶段编码器 + 跨模态注意力 + 双路径语言模型"""

    def __init__(self, config: Optional[RunConfig] = None):
        super().__init__()
        self.config = config or RunConfig()
        cfg = self.config
        self.stage1 = AffectContextEncoder(
            cfg.features.n_mels, cfg.attention, cfg.encoder, cfg.adapter,
            use_dual_attention=cfg.training.use_dual_attention,
        )
        self.cross = CrossModalAttention(cfg.lm.model_dim, cfg.lm.n_heads, seed=cfg.attention.seed + 7,
                                         enabled=cfg.training.use_cross_attention)
        self.lm = ToyLM(cfg.lm, cfg.lora)

    def fuse(self, example: PreparedExample) -> EmbeddingSequence:
        """E_fused = CrossAttn(E_spch, E_text)，E_text 为历史区间的词嵌入"""
        start, end = example.history_span
        if end <= start:
            raise ShapeError(f"Example {example.dialogue_id} has an empty history span")
        e_spch = self.stage1(example.turn_frames)
        e_text = EmbeddingSequence(self.lm.embed(example.tokens[start:end]), TEXT)
        return cross_modal_attention(e_spch, e_text, self.cross)

    def speech_inputs(self, example: PreparedExample, extra_tokens: Optional[torch.Tensor] = None,
                      e_fused: Optional[EmbeddingSequence] = None) -> Tuple[torch.Tensor, torch.Tensor]:
        """语音路径输入：前缀嵌入 + E_fused + 后缀嵌入；返回 (嵌入, 语音掩码)"""
        start, end = example.history_span
        tokens = example.tokens if extra_tokens is None else torch.cat([example.tokens, extra_tokens])
        embedded = self.lm.embed(tokens)
        fused = e_fused if e_fused is not None else self.fuse(example)

        inputs = torch.cat([embedded[:start], fused.values, embedded[end:]], dim=0)
        mask = torch.zeros(inputs.shape[0], dtype=torch.bool)
        mask[start:start + fused.length] = True
        return inputs, mask

    def forward(self, example: PreparedExample) -> DualPathOutput:
        if example.target_span is None:
            raise ShapeError(f"Example {example.dialogue_id} has no target span")
        t_start, t_end = example.target_span
        h_start, h_end = example.history_span

        fused = self.fuse(example)
        inputs, mask = self.speech_inputs(example, e_fused=fused)
        p_spch = lm_forward(inputs, SPEECH_PATH, self.lm, mask)
        p_text = lm_forward(example.tokens, TEXT_PATH, self.lm)

        # 位置 t-1 预测 token t；语音路径的位置按历史长度差平移
        text_index = torch.arange(t_start, t_end) - 1
        speech_index = text_index + fused.length - (h_end - h_start)
        return DualPathOutput(
            p_spch=p_spch[speech_index],
            p_text=p_text[text_index],
            targets=example.tokens[t_start:t_end],
            speech_length=inputs.shape[0],
        )

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]
