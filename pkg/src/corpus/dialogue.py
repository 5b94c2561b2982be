# src/corpus/dialogue.py
import os
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from speech_features.audio import Waveform
from speech_features.mel import FeatureMatrix

# 设置日志
logger = logging.getLogger(__name__)

SPEAKER = "speaker"
LISTENER = "listener"
ROLES = (SPEAKER, LISTENER)


class CorpusError(Exception):
    """语料读取错误"""
    pass


@dataclass
class Turn:
    """对话中的一轮"""
    index: int
    role: str
    text: str
    audio_path: Optional[str] = None
    waveform: Optional[Waveform] = None
    features: Optional[FeatureMatrix] = None

    @property
    def has_audio(self) -> bool:
        return self.audio_path is not None or self.waveform is not None or self.features is not None


@dataclass
class DialogueHistory:
    """对话历史 + 目标回复（最后一轮 listener）"""
    dialogue_id: str
    turns: List[Turn]
    target: Turn

    def __post_init__(self):
        problems = validate_dialogue(self.dialogue_id, self.turns, self.target)
        if problems:
            raise CorpusError(f"Dialogue {self.dialogue_id}: " + "; ".join(problems))

    @property
    def all_turns(self) -> List[Turn]:
        return list(self.turns) + [self.target]


@dataclass
class ValidationIssue:
    """单条语料验证问题"""
    dialogue_id: str
    line: Optional[int]
    problems: List[str] = field(default_factory=list)

    def __str__(self) -> str:
        where = f" (line {self.line})" if self.line is not None else ""
        return f"{self.dialogue_id}{where}: " + "; ".join(self.problems)


@dataclass
class CorpusLoadResult:
    """读取结果：有效对话 + 错误报告"""
    dialogues: List[DialogueHistory] = field(default_factory=list)
    errors: List[ValidationIssue] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def validate_dialogue(dialogue_id: str, turns: List[Turn], target: Optional[Turn]) -> List[str]:
    """检查下标连续、角色交替（speaker 开头）、目标为 listener"""
    problems = []
    if not turns:
        problems.append("at least one history turn is required before the target")
    if target is None:
        problems.append("missing target turn")
        return problems

    sequence = list(turns) + [target]
    for position, turn in enumerate(sequence):
        if turn.index != position:
            problems.append(f"turn indices are not contiguous from 0 (found {turn.index} at position {position})")
            break
    for position, turn in enumerate(sequence):
        expected = ROLES[position % 2]
        if turn.role != expected:
            problems.append(f"role alternation violated at turn {turn.index}: expected {expected}, got {turn.role}")
            break
    if target.role != LISTENER:
        problems.append(f"target role must be {LISTENER}, got {target.role}")
    return problems


def _parse_entry(entry: Dict[str, Any], base_dir: str, line: Optional[int],
                 allow_missing_audio: bool):
    dialogue_id = str(entry.get("dialogue_id", f"<line {line}>"))
    problems = []
    raw_turns = entry.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        return None, ValidationIssue(dialogue_id, line, ["'turns' must be a non-empty list"])

    turns = []
    for raw in raw_turns:
        try:
            audio = raw.get("audio")
            audio_path = None
            if audio:
                audio_path = audio if os.path.isabs(audio) else os.path.join(base_dir, audio)
                if not os.path.exists(audio_path):
                    if allow_missing_audio:
                        logger.warning(f"{dialogue_id}: audio file {audio_path} not found, turn kept without audio")
                        audio_path = None
                    else:
                        problems.append(f"audio file not found: {audio}")
            turns.append(Turn(int(raw["index"]), str(raw["role"]), str(raw["text"]), audio_path))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            problems.append(f"malformed turn {raw!r}: {e}")

    if problems:
        return None, ValidationIssue(dialogue_id, line, problems)

    history, target = turns[:-1], turns[-1]
    problems = validate_dialogue(dialogue_id, history, target)
    if problems:
        return None, ValidationIssue(dialogue_id, line, problems)
    return DialogueHistory(dialogue_id, history, target), None


def load_corpus(path: str, manifest_format: str = "jsonl",
                allow_missing_audio: bool = False) -> CorpusLoadResult:
    """读取对话清单

    Args:
        path: 清单文件（jsonl：每行一个对话；json：对话数组）
        manifest_format: jsonl / json
        allow_missing_audio: 为 True 时缺失音频的轮次保留但不带音频

    Returns:
        CorpusLoadResult，验证失败的条目进入错误报告而不是被静默丢弃

    Raises:
        CorpusError: 清单不可读或格式未知
    """
    if manifest_format not in ("jsonl", "json"):
        raise CorpusError(f"Unknown manifest format: {manifest_format}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            content = fh.read()
    except OSError as e:
        raise CorpusError(f"Cannot read manifest {path}: {e}")

    base_dir = os.path.dirname(os.path.abspath(path))
    result = CorpusLoadResult()

    entries = []
    if manifest_format == "jsonl":
        for line_no, line in enumerate(content.splitlines(), 1):
            if not line.strip():
                continue
            try:
                entries.append((line_no, json.loads(line)))
            except json.JSONDecodeError as e:
                result.errors.append(ValidationIssue(f"<line {line_no}>", line_no, [f"invalid JSON: {e}"]))
    else:
        try:
            data = json.loads(content) if content.strip() else []
        except json.JSONDecodeError as e:
            raise CorpusError(f"Invalid JSON manifest {path}: {e}")
        if not isinstance(data, list):
            raise CorpusError(f"JSON manifest {path} must contain a list of dialogues")
        entries = [(None, item) for item in data]

    for line_no, entry in entries:
        if not isinstance(entry, dict):
            result.errors.append(ValidationIssue(f"<line {line_no}>", line_no, ["entry is not an object"]))
            continue
        dialogue, issue = _parse_entry(entry, base_dir, line_no, allow_missing_audio)
        if issue:
            result.errors.append(issue)
        else:
            result.dialogues.append(dialogue)

    logger.info(f"Loaded {len(result.dialogues)} dialogues from {path} ({len(result.errors)} errors)")
    return result


def dialogue_to_entry(dialogue: DialogueHistory, audio_names: Optional[Dict[int, str]] = None) -> Dict[str, Any]:
    """对话 -> 清单条目"""
    audio_names = audio_names or {}
    return {
        "dialogue_id": dialogue.dialogue_id,
        "turns": [
            {
                "index": turn.index,
                "role": turn.role,
                "text": turn.text,
                "audio": audio_names.get(turn.index, turn.audio_path),
            }
            for turn in dialogue.all_turns
        ],
    }
