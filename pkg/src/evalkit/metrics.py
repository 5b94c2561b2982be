# src/evalkit/metrics.py
import re
import math
import logging
from collections import Counter
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from nltk.translate.bleu_score import brevity_penalty
from nltk.util import ngrams

# 设置日志
logger = logging.getLogger(__name__)

BLEU_EPSILON = 1e-9
MAX_BLEU_ORDER = 4
TABLE_COLUMNS = ("BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROU-1", "ROU-2", "ROU-L", "Dist-1", "Dist-2")

_PUNCTUATION = re.compile(r"[^\w\s]")

Tokens = Sequence[str]


class MetricError(Exception):
    """评测指标输入错误"""
    pass


@dataclass
class MetricReport:
    """语料级自动指标"""
    bleu: Tuple[float, float, float, float]
    rouge: Dict[str, float]
    distinct: Dict[str, float]
    n_samples: int
    run_config: Optional[Dict[str, Any]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.n_samples < 1:
            raise MetricError("MetricReport needs at least one sample")
        for name, value in self.scores().items():
            if not 0.0 <= value <= 1.0:
                raise MetricError(f"{name} = {value} is outside [0, 1]")

    def scores(self) -> Dict[str, float]:
        """按结果表列顺序的全部分数"""
        values = list(self.bleu) + [self.rouge["r1"], self.rouge["r2"], self.rouge["rl"],
                                    self.distinct["d1"], self.distinct["d2"]]
        return dict(zip(TABLE_COLUMNS, values))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["bleu"] = list(self.bleu)
        if self.run_config is None:
            data.pop("run_config")
        return data


def normalize_text(text: str) -> List[str]:
    """指标分词：小写 + 去标点 + 按空白切分"""
    return _PUNCTUATION.sub("", text.lower()).split()


def _as_tokens(value: Union[str, Tokens]) -> List[str]:
    return normalize_text(value) if isinstance(value, str) else list(value)


def _check_order(n: int) -> None:
    if not 1 <= n <= MAX_BLEU_ORDER:
        raise MetricError(f"BLEU order must be in 1..{MAX_BLEU_ORDER}, got {n}")


def _clipped_counts(cand: Sequence[str], ref: Sequence[str], n: int) -> Tuple[int, int]:
    """(截断后的匹配 n-gram 数, 候选 n-gram 总数)"""
    cand_counts = Counter(ngrams(cand, n))
    return sum((cand_counts & Counter(ngrams(ref, n))).values()), sum(cand_counts.values())


def corpus_bleu_n(candidates: Sequence[Tokens], references: Sequence[Tokens], n: int) -> float:
    """
    语料级 BLEU-n：截断 n-gram 精度、1..n 阶几何平均、简短惩罚

    每阶精度为全部候选的匹配数之和除以候选 n-gram 数之和。
    候选与参考都没有某阶 n-gram（句子短于 n）时该阶精度记为 1；
    零精度以 ε=1e-9 平滑；一元组全不匹配时返回 0。
    """
    _check_order(n)
    if len(candidates) != len(references):
        raise MetricError(f"{len(candidates)} candidates for {len(references)} references")
    if not any(len(c) for c in candidates):
        logger.warning("BLEU on empty candidate(s); returning 0")
        return 0.0

    log_sum = 0.0
    for order in range(1, n + 1):
        matched = total = 0
        for cand, ref in zip(candidates, references):
            m, t = _clipped_counts(cand, ref, order)
            matched += m
            total += t
        if total == 0:
            ref_total = sum(max(0, len(ref) - order + 1) for ref in references)
            precision = 1.0 if ref_total == 0 else BLEU_EPSILON
        elif matched == 0:
            if order == 1:
                return 0.0
            precision = BLEU_EPSILON / total
        else:
            precision = matched / total
        log_sum += math.log(precision) / n

    hyp_len = sum(len(c) for c in candidates)
    ref_len = sum(len(r) for r in references)
    return float(brevity_penalty(ref_len, hyp_len) * math.exp(log_sum))


def bleu_n(candidate: Union[str, Tokens], reference: Union[str, Tokens], n: int) -> float:
    """单句 BLEU-n；空候选返回 0 并告警"""
    _check_order(n)
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand:
        logger.warning("BLEU on an empty candidate; returning 0")
        return 0.0
    return corpus_bleu_n([cand], [ref], n)


def _ngram_f1(cand: List[str], ref: List[str], n: int) -> float:
    cand_counts = Counter(ngrams(cand, n))
    ref_counts = Counter(ngrams(ref, n))
    if not cand_counts and not ref_counts:
        # 两侧都短于 n：非空且逐词相同记为 1
        return 1.0 if cand and cand == ref else 0.0
    overlap = sum((cand_counts & ref_counts).values())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand_counts.values())
    recall = overlap / sum(ref_counts.values())
    return 2 * precision * recall / (precision + recall)


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    """最长公共子序列长度（动态规划）"""
    previous = [0] * (len(b) + 1)
    for x in a:
        current = [0]
        for j, y in enumerate(b):
            current.append(previous[j] + 1 if x == y else max(previous[j + 1], current[j]))
        previous = current
    return previous[-1]


def rouge(candidate: Union[str, Tokens], reference: Union[str, Tokens]) -> Dict[str, float]:
    """ROUGE-1/2 为 n-gram F1，ROUGE-L 为 LCS F1；两侧皆空时为 0，相同的非空文本各项为 1"""
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    scores = {"r1": _ngram_f1(cand, ref, 1), "r2": _ngram_f1(cand, ref, 2), "rl": 0.0}
    lcs = lcs_length(cand, ref)
    if lcs:
        precision, recall = lcs / len(cand), lcs / len(ref)
        scores["rl"] = 2 * precision * recall / (precision + recall)
    return scores


def distinct_n(responses: Sequence[Union[str, Tokens]], n: int) -> float:
    """语料中不同 n-gram 数 / n-gram 总数；总数为 0 时返回 0 并告警"""
    if n < 1:
        raise MetricError(f"Distinct order must be >= 1, got {n}")
    if not responses:
        raise MetricError("distinct_n needs at least one response")
    counts: Counter = Counter()
    for response in responses:
        counts.update(ngrams(_as_tokens(response), n))
    total = sum(counts.values())
    if total == 0:
        logger.warning(f"Distinct-{n}: corpus has no {n}-grams; returning 0")
        return 0.0
    return len(counts) / total


def evaluate_corpus(predictions: Sequence[str], references: Sequence[str]) -> MetricReport:
    """语料级 BLEU-1..4、平均 ROUGE F1、Distinct-1/2"""
    if not predictions:
        raise MetricError("no predictions to evaluate")
    if len(predictions) != len(references):
        raise MetricError(f"{len(predictions)} predictions for {len(references)} references")

    cands = [normalize_text(p) for p in predictions]
    refs = [normalize_text(r) for r in references]
    bleu = tuple(corpus_bleu_n(cands, refs, n) for n in range(1, MAX_BLEU_ORDER + 1))

    per_sample = [rouge(c, r) for c, r in zip(cands, refs)]
    rouge_avg = {key: sum(s[key] for s in per_sample) / len(per_sample) for key in ("r1", "r2", "rl")}
    distinct = {"d1": distinct_n(cands, 1), "d2": distinct_n(cands, 2)}

    logger.info(f"Evaluated {len(predictions)} responses")
    return MetricReport(bleu, rouge_avg, distinct, len(predictions))


def format_report_table(report: MetricReport) -> str:
    """按结果表列顺序输出定宽表格（百分数，两位小数）"""
    width = max(len(c) for c in TABLE_COLUMNS) + 2
    header = "".join(c.rjust(width) for c in TABLE_COLUMNS)
    row = "".join(f"{100 * v:.2f}".rjust(width) for v in report.scores().values())
    return "\n".join([header, "-" * len(header), row])
