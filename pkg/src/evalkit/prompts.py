# src/evalkit/prompts.py
import re
import math
import logging
from typing import Dict

# 设置日志
logger = logging.getLogger(__name__)

QUALITY = "quality"
EMPATHY = "empathy"
COMPLETENESS = "completeness"
FLUENCY = "fluency"
DIMENSIONS = (QUALITY, EMPATHY, COMPLETENESS, FLUENCY)

_HEADER = (
    "Given the conversation history and the model's response. "
    "You are a helpful and precise assistant for checking the {name} of the response."
)
_BODY = (
    "<instruction>\n"
    "{instruction}\n"
    "</instruction>\n"
    "<response>\n"
    "{response}\n"
    "</response>"
)
_DIRECTIVE = (
    "Please evaluate the response with your justification having less than three sentences, "
    "and provide a score ranging from 0 to 10 after your justification. "
    "When evaluating the response, you should consider {criteria}. "
    "The score should be wrapped by <score> and </score>."
)

_CRITERIA: Dict[str, str] = {
    QUALITY: "the helpfulness, harmlessness, and honesty of the response",
    EMPATHY: "whether it shows empathy and appropriate emotional understanding",
    COMPLETENESS: "whether it adequately addresses all aspects of the user's needs "
                  "without omitting important information",
    FLUENCY: "the naturalness, coherence, and linguistic quality of the generated response",
}

# 每个维度的评审提示模板；{instruction} / {response} 为占位符
EVAL_TEMPLATES: Dict[str, str] = {
    dim: "\n\n".join([_HEADER.replace("{name}", dim), _BODY, _DIRECTIVE.replace("{criteria}", _CRITERIA[dim])])
    for dim in DIMENSIONS
}

MIN_SCORE = 0.0
MAX_SCORE = 10.0
_SCORE_PATTERN = re.compile(r"<score>(.*?)</score>", re.DOTALL)
_NUMBER_PATTERN = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")


class PromptError(Exception):
    """评审提示渲染错误"""
    pass


class ScoreParseError(Exception):
    """评审回复中的分数无法解析或越界"""
    pass


def render_eval_prompt(dimension: str, instruction: str, response: str) -> str:
    """
    渲染评审提示

    替换是逐字的：instruction / response 中的花括号原样保留。

    Raises:
        PromptError: 未知维度
    """
    template = EVAL_TEMPLATES.get(dimension)
    if template is None:
        raise PromptError(f"Unknown evaluation dimension: {dimension}")
    head, rest = template.split("{instruction}", 1)
    middle, tail = rest.split("{response}", 1)
    return head + instruction + middle + response + tail


def parse_score(judge_reply: str) -> float:
    """提取第一个格式正确的 <score>…</score> 数值并检查 0..10 范围"""
    candidates = [m.group(1).strip() for m in _SCORE_PATTERN.finditer(judge_reply or "")]
    numbers = [raw for raw in candidates if _NUMBER_PATTERN.fullmatch(raw)]
    if not numbers:
        detail = f": ill-formed score {candidates[0]!r}" if candidates else ""
        raise ScoreParseError(f"no score found{detail}")
    score = float(numbers[0])
    if not math.isfinite(score) or not MIN_SCORE <= score <= MAX_SCORE:
        raise ScoreParseError(f"score {score} out of range [{MIN_SCORE:g}, {MAX_SCORE:g}]")
    return score
