# src/corpus/tokenizer.py
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple


@dataclass(frozen=True)
class ByteVocab:
    """字节级词表（替代骨干分词器）"""
    size: int = 256

    def encode(self, text: str) -> List[int]:
        return list(text.encode("utf-8"))

    def decode(self, tokens: Sequence[int]) -> str:
        return bytes(int(t) for t in tokens).decode("utf-8", errors="replace")

    def char_span_to_token_span(self, text: str, span: Tuple[int, int]) -> Tuple[int, int]:
        """字符区间 -> token 区间"""
        start, end = span
        return len(text[:start].encode("utf-8")), len(text[:end].encode("utf-8"))


DEFAULT_VOCAB = ByteVocab()


def tokenize(text: str, vocab_spec: Optional[ByteVocab] = None) -> List[int]:
    """可逆的字节级切分"""
    return (vocab_spec or DEFAULT_VOCAB).encode(text)


def detokenize(tokens: Sequence[int], vocab_spec: Optional[ByteVocab] = None) -> str:
    return (vocab_spec or DEFAULT_VOCAB).decode(tokens)
