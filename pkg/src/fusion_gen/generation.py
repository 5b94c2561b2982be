# src/fusion_gen/generation.py
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence

import torch

from config.config_manager import RunConfig
from corpus.dialogue import DialogueHistory
from corpus.templates import get_format
from corpus.tokenizer import DEFAULT_VOCAB, ByteVocab
from fusion_gen.model import ES4RModel, prepare_example
from fusion_gen.trainer import load_checkpoint
from fusion_gen.toy_lm import SPEECH_PATH, lm_forward
from speech_features.mel import FeatureExtractor
from synth_control.controller import ControlResult, SynthController
from synth_control.record import ControlRecord

# 设置日志
logger = logging.getLogger(__name__)

GREEDY = "greedy"


def generate(model: ES4RModel, history: DialogueHistory, max_new_tokens: int, mode: str = GREEDY,
             extractor: Optional[FeatureExtractor] = None, template_format: Optional[str] = None,
             vocab: ByteVocab = DEFAULT_VOCAB) -> List[int]:
    """
    语音路径上的贪心解码

    生成到解码尾部等于模板结束分隔符，或达到 max_new_tokens / max_len 为止。

    Returns:
        新生成的 token（含结束分隔符）
    """
    if mode != GREEDY:
        raise ValueError(f"Unsupported decoding mode: {mode}")
    if max_new_tokens < 0:
        raise ValueError(f"max_new_tokens must be >= 0, got {max_new_tokens}")
    if max_new_tokens == 0:
        return []

    template_format = template_format or model.config.training.template_format
    end = get_format(template_format).end
    param = next(model.parameters())
    example = prepare_example(history, extractor or FeatureExtractor(model.config.features),
                              template_format, include_target=False, vocab=vocab, dtype=param.dtype)

    model.eval()
    generated: List[int] = []
    with torch.no_grad():
        fused = model.fuse(example)
        for _ in range(max_new_tokens):
            extra = torch.tensor(generated, dtype=torch.long)
            inputs, mask = model.speech_inputs(example, extra_tokens=extra, e_fused=fused)
            if inputs.shape[0] > model.lm.cfg.max_len:
                logger.warning(f"Generation for {history.dialogue_id} stopped at max_len {model.lm.cfg.max_len}")
                break
            probs = lm_forward(inputs, SPEECH_PATH, model.lm, mask)
            generated.append(int(torch.argmax(probs[-1])))
            if vocab.decode(generated).endswith(end):
                break
    return generated


def strip_end(text: str, template_format: str) -> str:
    end = get_format(template_format).end
    return text[:-len(end)] if text.endswith(end) else text


@dataclass
class ResponseResult:
    """推理结果：回复文本 + 第三阶段控制记录"""
    dialogue_id: str
    text: str
    tokens: List[int]
    control: ControlResult

    @property
    def record(self) -> ControlRecord:
        return self.control.record


class ResponsePipeline:
    """第一阶段 -> 融合 -> 贪心生成 -> 第三阶段"""

    def __init__(self, model: ES4RModel, config: Optional[RunConfig] = None,
                 extractor: Optional[FeatureExtractor] = None):
        self.model = model
        self.config = config or model.config
        self.extractor = extractor or FeatureExtractor(self.config.features)
        self.controller = SynthController(self.config.synth_control, self.extractor)

    @classmethod
    def from_checkpoint(cls, path: str, overrides: Optional[RunConfig] = None) -> "ResponsePipeline":
        """从检查点构建；overrides 提供第三阶段与生成参数（模型结构以检查点为准）"""
        model, config, step = load_checkpoint(path)
        if overrides is not None:
            config.synth_control = overrides.synth_control
            config.training.max_new_tokens = overrides.training.max_new_tokens
            config.paths = overrides.paths
            config.judge = overrides.judge
        logger.info(f"Loaded checkpoint {path} (step {step})")
        return cls(model, config)

    def respond(self, history: DialogueHistory,
                styles: Optional[Dict[int, Sequence[float]]] = None,
                run_config: Optional[Dict[str, Any]] = None) -> ResponseResult:
        fmt = self.config.training.template_format
        tokens = generate(self.model, history, self.config.training.max_new_tokens,
                          extractor=self.extractor, template_format=fmt)
        text = strip_end(DEFAULT_VOCAB.decode(tokens), fmt)
        control = self.controller.run(history, text, styles,
                                      run_config if run_config is not None else self.config.to_dict())
        return ResponseResult(history.dialogue_id, text, tokens, control)
