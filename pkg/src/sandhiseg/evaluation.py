"""Word-level micro-averaged precision, recall and F-score.

Words are matched per sentence as multisets of surface forms, so word order
does not matter. Scores are micro-averaged: match/predicted/gold counts are
summed over sentences before dividing.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Sequence

from .corpus import ParallelCorpus

MAX_EXACT_BUCKET = 10
OVERFLOW_BUCKET = "10+"


@dataclass(frozen=True)
class SentenceResult:
    matches: int
    predicted_count: int
    gold_count: int
    gold_word_len: int

    def __post_init__(self):
        if min(self.matches, self.predicted_count, self.gold_count, self.gold_word_len) < 0:
            raise ValueError("counts must be non-negative")
        if self.matches > min(self.predicted_count, self.gold_count):
            raise ValueError("matches exceed min(predicted_count, gold_count)")


@dataclass
class LengthGroup:
    precision: float
    recall: float
    count: int


@dataclass
class EvalReport:
    micro_precision: float
    micro_recall: float
    micro_f: float
    total_sentences: int
    per_length: dict[str, LengthGroup] = field(default_factory=dict)


def f_score(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def sentence_match(pred: Sequence[str], gold: Sequence[str]) -> SentenceResult:
    """Multiset intersection of predicted and gold word forms."""
    cp, cg = Counter(pred), Counter(gold)
    matches = sum(min(n, cg[w]) for w, n in cp.items())
    return SentenceResult(matches, len(pred), len(gold), len(gold))


def length_bucket(n_words: int) -> str:
    """Exact word counts up to 10; anything longer shares one overflow bucket."""
    return str(n_words) if n_words <= MAX_EXACT_BUCKET else OVERFLOW_BUCKET


def _bucket_order(key: str) -> tuple[int, str]:
    return (MAX_EXACT_BUCKET + 1, key) if key == OVERFLOW_BUCKET else (int(key), key)


def micro_average(results: Iterable[SentenceResult]) -> EvalReport:
    results = list(results)
    if not results:
        raise ValueError("micro_average needs at least one sentence result")
    m = sum(r.matches for r in results)
    p = _ratio(m, sum(r.predicted_count for r in results))
    r_ = _ratio(m, sum(r.gold_count for r in results))

    groups: dict[str, list[SentenceResult]] = {}
    for res in results:
        groups.setdefault(length_bucket(res.gold_word_len), []).append(res)
    per_length = {}
    for key in sorted(groups, key=_bucket_order):
        rs = groups[key]
        gm = sum(x.matches for x in rs)
        per_length[key] = LengthGroup(
            _ratio(gm, sum(x.predicted_count for x in rs)),
            _ratio(gm, sum(x.gold_count for x in rs)),
            len(rs),
        )
    return EvalReport(p, r_, f_score(p, r_), len(results), per_length)


def evaluate_corpus(predictions: Sequence[Sequence[str]], gold: ParallelCorpus | Sequence[str]) -> EvalReport:
    """Score predicted word lists against gold unsandhied sentences.

    ``gold`` is a ParallelCorpus (its target side is used) or a list of
    space-separated gold sentences.
    """
    gold_lines = gold.targets if isinstance(gold, ParallelCorpus) else list(gold)
    if len(predictions) != len(gold_lines):
        raise ValueError(f"{len(predictions)} predictions for {len(gold_lines)} gold sentences")
    return micro_average(sentence_match(list(p), g.split()) for p, g in zip(predictions, gold_lines))


def percent(x: float) -> str:
    """Percentage with two decimals, rounding half up."""
    return str(Decimal(repr(x * 100)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


def format_report(report: EvalReport) -> str:
    lines = [
        f"sentences  {report.total_sentences}",
        f"precision  {percent(report.micro_precision)}",
        f"recall     {percent(report.micro_recall)}",
        f"f-score    {percent(report.micro_f)}",
        "",
        "words  precision  recall  sentences",
    ]
    for key, g in report.per_length.items():
        lines.append(f"{key:>5}  {percent(g.precision):>9}  {percent(g.recall):>6}  {g.count:>9}")
    lines += [
        "",
        f"micro_precision\t{report.micro_precision!r}",
        f"micro_recall\t{report.micro_recall!r}",
        f"micro_f\t{report.micro_f!r}",
        f"total_sentences\t{report.total_sentences}",
    ]
    return "\n".join(lines) + "\n"


def per_length_csv(report: EvalReport) -> str:
    rows = ["gold_len,precision,recall,count"]
    for key, g in report.per_length.items():
        rows.append(f"{key},{g.precision!r},{g.recall!r},{g.count}")
    return "\n".join(rows) + "\n"
