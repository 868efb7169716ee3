"""Candidate scoring and ranking.

The ranking contract only consumes score order, so any scorer that maps a
(question, candidate) pair to a finite real plugs in: the bundled lexical
baseline is an idf-weighted cosine, and scores computed by an external
ranker can be imported from a file and replayed.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Protocol

from . import textproc
from .corpus import Candidate, CandidateSet, Dataset, Question
from .errors import DataError


class Scorer(Protocol):
    """Deterministic pure scoring function."""

    def score(self, question: Question, candidate: Candidate) -> float: ...


class UseExternalScores:
    """Sentinel: rank by each candidate's imported external score."""


USE_EXTERNAL_SCORES = UseExternalScores()


@dataclass(frozen=True)
class ScoredCandidate:
    candidate: Candidate
    score: float


@dataclass(frozen=True)
class RankedList:
    """Candidates sorted by score descending; ties keep input order."""

    question: Question
    entries: tuple[ScoredCandidate, ...]

    def candidates(self) -> tuple[Candidate, ...]:
        return tuple(e.candidate for e in self.entries)


@dataclass(frozen=True)
class IdfTable:
    """Token -> idf weight, with the df=0 weight for unseen tokens."""

    weights: Mapping[str, float]
    default: float

    def weight(self, token: str) -> float:
        return self.weights.get(token, self.default)


def build_idf(dataset: Dataset) -> IdfTable:
    """Candidate-level document frequencies over the whole dataset.

    idf(t) = ln((1 + N) / (1 + df(t))) + 1 with N the total candidate
    count; unseen tokens get the df = 0 weight.
    """
    df: Counter[str] = Counter()
    n_candidates = 0
    for entry in dataset.entries:
        for cand in entry.candidates:
            n_candidates += 1
            df.update(set(textproc.tokenize(cand.text)))
    if n_candidates == 0:
        raise DataError("cannot build idf table from an empty dataset")
    weights = {t: math.log((1 + n_candidates) / (1 + d)) + 1.0 for t, d in df.items()}
    return IdfTable(weights=weights, default=math.log(1 + n_candidates) + 1.0)


def uniform_idf() -> IdfTable:
    """All-ones weights; reduces the lexical score to plain cosine."""
    return IdfTable(weights={}, default=1.0)


def score_lexical(q: Question, c: Candidate, idf: IdfTable) -> float:
    """Cosine similarity of idf-weighted token-count vectors, in [0, 1]."""
    q_counts = Counter(textproc.tokenize(q.text))
    c_counts = Counter(textproc.tokenize(c.text))
    if not q_counts or not c_counts:
        return 0.0
    q_vec = {t: n * idf.weight(t) for t, n in q_counts.items()}
    c_vec = {t: n * idf.weight(t) for t, n in c_counts.items()}
    dot = sum(w * c_vec[t] for t, w in q_vec.items() if t in c_vec)
    q_norm = math.sqrt(sum(w * w for w in q_vec.values()))
    c_norm = math.sqrt(sum(w * w for w in c_vec.values()))
    return dot / (q_norm * c_norm)


@dataclass(frozen=True)
class LexicalScorer:
    idf: IdfTable

    def score(self, question: Question, candidate: Candidate) -> float:
        return score_lexical(question, candidate, self.idf)


def rank(
    q: Question, cset: CandidateSet, scorer: Scorer | UseExternalScores
) -> RankedList:
    """Score every candidate and sort descending, ties by input position."""
    scored: list[tuple[float, int, Candidate]] = []
    for index, cand in enumerate(cset.candidates):
        if isinstance(scorer, UseExternalScores):
            if cand.external_score is None:
                raise DataError(
                    f"candidate {cand.id!r} has no external score",
                    f"question {q.id!r}",
                )
            value = cand.external_score
        else:
            value = float(scorer.score(q, cand))
        if not math.isfinite(value):
            raise DataError(
                f"scorer produced a non-finite score for candidate {cand.id!r}",
                f"question {q.id!r}",
            )
        scored.append((value, index, cand))
    scored.sort(key=lambda item: (-item[0], item[1]))
    return RankedList(
        question=q,
        entries=tuple(ScoredCandidate(cand, value) for value, _, cand in scored),
    )


def top_k(ranked: RankedList, k: int) -> tuple[Candidate, ...]:
    """First min(k, n) candidates of the ranking."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return ranked.candidates()[:k]


def load_scores(path: str | Path) -> list[tuple[str, str, float]]:
    """Parse tab-separated "qid<TAB>cid<TAB>score" rows."""
    rows: list[tuple[str, str, float]] = []
    p = Path(path)
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            where = f"{p}:{lineno}"
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"expected 3 tab-separated fields, got {len(parts)}", where)
            qid, cid, raw = parts
            try:
                score = float(raw)
            except ValueError:
                raise DataError(f"score {raw!r} is not a number", where) from None
            if not math.isfinite(score):
                raise DataError(f"score {raw!r} is not finite", where)
            rows.append((qid, cid, score))
    return rows


def write_scores(rows: list[tuple[str, str, float]], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for qid, cid, score in rows:
            f.write(f"{qid}\t{cid}\t{score!r}\n")


def import_scores(dataset: Dataset, scorefile: str | Path) -> Dataset:
    """Dataset copy with external scores applied to the referenced pairs.

    Every row must name an existing (qid, cid) pair, at most once.
    """
    rows = load_scores(scorefile)
    by_qid = {e.question.id: i for i, e in enumerate(dataset.entries)}
    entries = list(dataset.entries)
    seen: set[tuple[str, str]] = set()
    for qid, cid, score in rows:
        if (qid, cid) in seen:
            raise DataError(f"duplicate score row for ({qid!r}, {cid!r})", str(scorefile))
        seen.add((qid, cid))
        if qid not in by_qid:
            raise DataError(f"score row references unknown question {qid!r}", str(scorefile))
        entry = entries[by_qid[qid]]
        if all(c.id != cid for c in entry.candidates):
            raise DataError(
                f"score row references unknown candidate ({qid!r}, {cid!r})",
                str(scorefile),
            )
        entries[by_qid[qid]] = replace(
            entry,
            candidates=tuple(
                replace(c, external_score=score) if c.id == cid else c
                for c in entry.candidates
            ),
        )
    return replace(dataset, entries=tuple(entries))
