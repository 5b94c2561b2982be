# src/corpus/templates.py
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from corpus.dialogue import DialogueHistory, SPEAKER

SYSTEM_MESSAGE = (
    "You are a helpful assistant. Your response should fulfill requests "
    "with empathy toward user's emotion tone."
)
CONTINUATION_INSTRUCTION = "Please continue the conversation naturally as the listener"

QWEN = "qwen"
LLAMA = "llama"


class TemplateError(Exception):
    """模板渲染错误"""
    pass


@dataclass(frozen=True)
class ChatFormat:
    """对话模板的分隔符"""
    name: str
    system_block: str
    header: str
    end: str

    def block_header(self, role: str) -> str:
        return self.header.format(role=role)


FORMATS: Dict[str, ChatFormat] = {
    # 系统块后重复的 <|im_end|> 行与模板原文一致
    QWEN: ChatFormat(
        name=QWEN,
        system_block="<|im_start|>system\n" + SYSTEM_MESSAGE + "<|im_end|>\n<|im_end|>\n",
        header="<|im_start|>{role}\n",
        end="<|im_end|>",
    ),
    LLAMA: ChatFormat(
        name=LLAMA,
        system_block="<|begin_of_text|><|start_header_id|>system<|end_header_id|>\n" + SYSTEM_MESSAGE + "<|eot_id|>\n",
        header="<|start_header_id|>{role}<|end_header_id|>\n",
        end="<|eot_id|>",
    ),
}

FORMAT_ALIASES = {"qwen-style": QWEN, "llama-style": LLAMA}


def get_format(name: str) -> ChatFormat:
    key = FORMAT_ALIASES.get(name, name)
    if key not in FORMATS:
        raise TemplateError(f"Unknown template format: {name}")
    return FORMATS[key]


@dataclass(frozen=True)
class RenderedDialogue:
    """渲染结果

    history_span: 对话历史块的字符区间（语音路径用 E_fused 替换这一段）
    target_span: 目标回复文本 + 结束分隔符的字符区间（损失掩码），未包含目标时为 None
    """
    text: str
    history_span: Tuple[int, int]
    target_span: Optional[Tuple[int, int]]
    format: str


def render_template(dialogue: DialogueHistory, format: str = QWEN,
                    include_target: bool = True) -> RenderedDialogue:
    """按对话模板逐字节渲染

    Raises:
        TemplateError: 未知格式
    """
    fmt = get_format(format)
    parts = [fmt.system_block]
    history_start = len(fmt.system_block)
    length = history_start

    for turn in dialogue.turns:
        role = "user" if turn.role == SPEAKER else "assistant"
        block = fmt.block_header(role) + turn.text + fmt.end + "\n"
        parts.append(block)
        length += len(block)
    history_end = length

    parts.append(fmt.block_header("user") + CONTINUATION_INSTRUCTION + fmt.end + "\n")
    parts.append(fmt.block_header("assistant"))
    prompt = "".join(parts)

    target_span = None
    if include_target:
        target_span = (len(prompt), len(prompt) + len(dialogue.target.text) + len(fmt.end))
        prompt = prompt + dialogue.target.text + fmt.end

    return RenderedDialogue(prompt, (history_start, history_end), target_span, fmt.name)
