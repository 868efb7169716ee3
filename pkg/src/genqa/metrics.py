"""Automatic evaluation: ranking metrics, BLEU, ROUGE-L, length stats.

All text metrics tokenize through textproc, so numbers are comparable
across this pipeline but not with external BLEU tools that tokenize
differently.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from . import textproc
from .corpus import Label


@dataclass(frozen=True)
class RankEval:
    """Labels of one question's candidates in rank order."""

    question_id: str
    labels: tuple[Label, ...]


@dataclass(frozen=True)
class GenEvalPair:
    hypothesis: str
    references: tuple[str, ...]


def precision_at_1(evals: Sequence[RankEval]) -> float:
    """Fraction of questions whose top-ranked candidate is correct."""
    if not evals:
        raise ValueError("precision_at_1 needs at least one ranked question")
    hits = sum(1 for e in evals if e.labels and e.labels[0] is Label.CORRECT)
    return hits / len(evals)


def hit_at_k(evals: Sequence[RankEval], k: int) -> float:
    """Fraction of questions with a correct candidate in the top k."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not evals:
        raise ValueError("hit_at_k needs at least one ranked question")
    hits = sum(
        1 for e in evals if any(lab is Label.CORRECT for lab in e.labels[:k])
    )
    return hits / len(evals)


def _ngrams(tokens: Sequence[str], n: int) -> Counter[tuple[str, ...]]:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(pairs: Sequence[GenEvalPair], max_n: int = 4) -> float:
    """Corpus-level BLEU in [0, 1].

    Uniform 1/max_n weights, n-gram counts clipped by the maximum count
    over the references, brevity penalty exp(1 - r/c) for c <= r with r
    the closest reference length per pair. Orders with zero clipped
    matches fall back to add-one smoothing so disjoint texts still score
    above zero.
    """
    if not pairs:
        raise ValueError("bleu needs at least one hypothesis/reference pair")
    if max_n < 1:
        raise ValueError(f"max_n must be >= 1, got {max_n}")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = 0
    ref_len = 0
    for pair in pairs:
        hyp = textproc.tokenize(pair.hypothesis)
        refs = [textproc.tokenize(r) for r in pair.references]
        if not refs:
            raise ValueError("every pair needs at least one reference")
        hyp_len += len(hyp)
        # closest reference length, ties to the shorter one
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            hyp_counts = _ngrams(hyp, n)
            totals[n - 1] += sum(hyp_counts.values())
            if not hyp_counts:
                continue
            clipped = Counter()
            for r in refs:
                ref_counts = _ngrams(r, n)
                for gram, count in hyp_counts.items():
                    clipped[gram] = max(clipped[gram], min(count, ref_counts[gram]))
            matches[n - 1] += sum(clipped.values())
    if hyp_len == 0:
        return 0.0
    log_precision = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            m, t = m + 1, t + 1
        log_precision += math.log(m / t) / max_n
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_precision)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f: float


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # one-row DP table
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(pair: GenEvalPair, beta: float = 1.0) -> RougeScore:
    """LCS-based precision/recall/F against the best-scoring reference."""
    hyp = textproc.tokenize(pair.hypothesis)
    best = RougeScore(0.0, 0.0, 0.0)
    for reference in pair.references:
        ref = textproc.tokenize(reference)
        if not hyp or not ref:
            continue
        lcs = _lcs_length(hyp, ref)
        p = lcs / len(hyp)
        r = lcs / len(ref)
        denom = r + beta * beta * p
        f = (1 + beta * beta) * p * r / denom if denom > 0 else 0.0
        if f > best.f:
            best = RougeScore(p, r, f)
    return best


@dataclass(frozen=True)
class LengthStats:
    mean: float
    std: float

    def __str__(self) -> str:
        return f"{self.mean:.1f}±{self.std:.1f}"


def length_stats(answers: Sequence[str]) -> LengthStats:
    """Mean and population standard deviation of token counts."""
    if not answers:
        raise ValueError("length_stats needs at least one answer")
    counts = [len(textproc.tokenize(a)) for a in answers]
    mean = sum(counts) / len(counts)
    var = sum((c - mean) ** 2 for c in counts) / len(counts)
    return LengthStats(mean=mean, std=math.sqrt(var))


@dataclass(frozen=True)
class SystemMetrics:
    """One system's row in the report; None renders as "-"."""

    name: str
    accuracy: float | None = None
    hit_at_5: float | None = None
    bleu: float | None = None
    rouge_l: float | None = None
    length: LengthStats | None = None


def _cell(value: float | LengthStats | None, fmt: str = "{:.3f}") -> str:
    if value is None:
        return "-"
    if isinstance(value, LengthStats):
        return str(value)
    return fmt.format(value)


def _table(header: list[str], rows: list[list[str]]) -> str:
    widths = [len(h) for h in header]
    for row in rows:
        widths = [max(w, len(c)) for w, c in zip(widths, row)]
    lines = []
    for cells in [header] + rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip())
    return "\n".join(lines)


def render_report(systems: Sequence[SystemMetrics]) -> str:
    """Two aligned plain-text tables: text-overlap view and ranking view."""
    overlap = _table(
        ["Model", "Accuracy", "BLEU", "ROUGE-L"],
        [
            [s.name, _cell(s.accuracy), _cell(s.bleu), _cell(s.rouge_l)]
            for s in systems
        ],
    )
    ranking = _table(
        ["System", "Acc.", "Hit@5", "Length"],
        [
            [s.name, _cell(s.accuracy), _cell(s.hit_at_5), _cell(s.length)]
            for s in systems
        ],
    )
    return overlap + "\n\n" + ranking + "\n"


def report_record(systems: Sequence[SystemMetrics]) -> dict:
    """Machine-readable companion to render_report."""
    return {
        "systems": {
            s.name: {
                "accuracy": s.accuracy,
                "hit_at_5": s.hit_at_5,
                "bleu": s.bleu,
                "rouge_l": s.rouge_l,
                "length_mean": s.length.mean if s.length else None,
                "length_std": s.length.std if s.length else None,
            }
            for s in systems
        }
    }
