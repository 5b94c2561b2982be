# src/corpus/synthetic.py
import os
import json
import logging
from typing import List, Optional, Sequence

import numpy as np

from speech_features.audio import Waveform, save_wav
from corpus.dialogue import (
    CorpusError, DialogueHistory, Turn, SPEAKER, LISTENER, ROLES, dialogue_to_entry,
)
from corpus.tokenizer import ByteVocab, DEFAULT_VOCAB

# 设置日志
logger = logging.getLogger(__name__)

FALLING = "falling"
RISING = "rising"
FLAT = "flat"
PROFILES = (FALLING, RISING, FLAT)

SPEAKER_LINES = {
    FALLING: ["I feel so tired lately.", "Nothing works out for me.", "I just want to rest.", "It was a long week."],
    RISING: ["I passed my exam today!", "Things are looking up!", "I got the job offer!", "The trip is tomorrow!"],
    FLAT: ["I went to the store.", "The weather was mild.", "I read a book today.", "Work was normal."],
}
LISTENER_LINES = ["I hear you.", "Tell me more.", "That makes sense.", "I see."]
RESPONSES = {
    FALLING: ["I'm sorry. Take it slow, I'm here.", "That sounds hard. Be gentle with yourself."],
    RISING: ["That's wonderful! Keep it up!", "So happy for you, well done!"],
    FLAT: ["Sounds like a calm day.", "Thanks for sharing that with me."],
}
TONES_HZ = (220.0, 330.0, 440.0, 550.0)
LISTENER_TONE_HZ = 660.0
LISTENER_GAIN = 0.5


def speaker_gains(profile: str, n_speaker_turns: int) -> np.ndarray:
    """说话人各轮增益：falling 递减、rising 递增、flat 恒定"""
    if profile == FALLING:
        return np.linspace(0.9, 0.3, n_speaker_turns)
    if profile == RISING:
        return np.linspace(0.3, 0.9, n_speaker_turns)
    if profile == FLAT:
        return np.full(n_speaker_turns, 0.6)
    raise CorpusError(f"Unknown energy profile: {profile}")


def _tone(freq: float, n_samples: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n_samples) / sample_rate
    return 0.5 * np.sin(2.0 * np.pi * freq * t)


def synth_corpus(n_dialogues: int, seed: int = 42, vocab_spec: Optional[ByteVocab] = None,
                 n_history_turns: int = 3, profiles: Sequence[str] = PROFILES,
                 sample_rate: int = 16000, turn_seconds: float = 0.5,
                 noise_level: float = 0.05) -> List[DialogueHistory]:
    """生成可复现的合成语料

    说话人轮次的音频为“正弦 + 对话内共享的种子噪声”乘以按能量剖面排布的增益，
    因此 falling 剖面的能量趋势必为负、rising 为正、flat 恰为 0。

    Args:
        n_dialogues: 对话数（>= 1）
        seed: 随机种子
        vocab_spec: 词表，文本必须可被其表示
        n_history_turns: 历史轮数（必须为奇数，保证目标轮为 listener）
        profiles: 按顺序循环分配的能量剖面

    Returns:
        DialogueHistory 列表，历史轮次携带 waveform
    """
    if n_dialogues < 1:
        raise CorpusError(f"n_dialogues must be >= 1, got {n_dialogues}")
    if n_history_turns < 1 or n_history_turns % 2 == 0:
        raise CorpusError(f"n_history_turns must be odd so the target is a listener turn, got {n_history_turns}")
    vocab = vocab_spec or DEFAULT_VOCAB
    if vocab.size < 256:
        raise CorpusError("synthetic corpus needs a byte-level vocabulary of size >= 256")

    rng = np.random.default_rng(seed)
    n_samples = int(round(turn_seconds * sample_rate))
    n_speaker = (n_history_turns + 1) // 2
    dialogues = []

    for d in range(n_dialogues):
        profile = profiles[d % len(profiles)]
        gains = speaker_gains(profile, n_speaker)
        base = _tone(TONES_HZ[rng.integers(len(TONES_HZ))], n_samples, sample_rate)
        base = base + noise_level * rng.standard_normal(n_samples)
        listener_base = _tone(LISTENER_TONE_HZ, n_samples, sample_rate)

        turns = []
        for index in range(n_history_turns):
            role = ROLES[index % 2]
            if role == SPEAKER:
                text = SPEAKER_LINES[profile][rng.integers(len(SPEAKER_LINES[profile]))]
                samples = gains[index // 2] * base
            else:
                text = LISTENER_LINES[rng.integers(len(LISTENER_LINES))]
                samples = LISTENER_GAIN * listener_base
            turns.append(Turn(index, role, text, waveform=Waveform(samples, sample_rate)))

        response = RESPONSES[profile][rng.integers(len(RESPONSES[profile]))]
        target = Turn(n_history_turns, LISTENER, response)
        dialogues.append(DialogueHistory(f"synth-{seed}-{d:05d}-{profile}", turns, target))

    logger.info(f"Generated {n_dialogues} synthetic dialogues (seed={seed})")
    return dialogues


def write_corpus(directory: str, dialogues: Sequence[DialogueHistory]) -> str:
    """把对话和音频写到目录，返回 manifest.jsonl 路径"""
    audio_dir = os.path.join(directory, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    manifest_path = os.path.join(directory, "manifest.jsonl")

    with open(manifest_path, "w", encoding="utf-8") as fh:
        for dialogue in dialogues:
            names = {}
            for turn in dialogue.all_turns:
                if turn.waveform is not None:
                    name = os.path.join("audio", f"{dialogue.dialogue_id}_utt{turn.index}.wav")
                    save_wav(os.path.join(directory, name), turn.waveform)
                    names[turn.index] = name
            fh.write(json.dumps(dialogue_to_entry(dialogue, names), ensure_ascii=False) + "\n")

    logger.info(f"Wrote {len(dialogues)} dialogues to {manifest_path}")
    return manifest_path
