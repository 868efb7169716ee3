"""Builds generation inputs and training examples from ranked candidates.

The source text for the generator is the question followed by the top-k
candidate texts, one per line. Supervision comes from the reference
answer when one exists; otherwise a correct candidate from the top-k is
drawn as the target, removed from the source lines, and backfilled with
the next-ranked candidate so the input keeps up to k lines.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from . import textproc
from .corpus import CandidateSet, Dataset, Label, Question
from .errors import DataError
from .selector import RankedList, Scorer, UseExternalScores, rank

DEFAULT_TOP_K = 5

PROVENANCE_REFERENCE = "reference"
PROVENANCE_CANDIDATE = "candidate"


@dataclass(frozen=True)
class GenInput:
    question_id: str
    source_text: str
    k_used: int


@dataclass(frozen=True)
class TrainingExample:
    source_text: str
    target_text: str
    question_id: str
    provenance: str  # PROVENANCE_REFERENCE or PROVENANCE_CANDIDATE
    provenance_cid: str | None = None


@dataclass(frozen=True)
class Skip:
    question_id: str
    reason: str


BuildResult = Union[TrainingExample, Skip]


def _require_single_line(text: str, what: str, qid: str) -> str:
    if "\n" in text:
        raise DataError(f"{what} contains a literal newline", f"question {qid!r}")
    return text


def build_inference_input(
    q: Question, ranked: RankedList, k: int = DEFAULT_TOP_K
) -> GenInput:
    """Question plus the top min(k, n) candidate texts, newline-joined."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not ranked.entries:
        raise DataError("ranked list is empty", f"question {q.id!r}")
    lines = [_require_single_line(q.text, "question text", q.id)]
    top = ranked.candidates()[:k]
    for cand in top:
        lines.append(_require_single_line(cand.text, f"candidate {cand.id!r} text", q.id))
    return GenInput(question_id=q.id, source_text="\n".join(lines), k_used=len(top))


def build_training_example(
    cset: CandidateSet,
    ranked: RankedList,
    k: int = DEFAULT_TOP_K,
    rng: np.random.Generator | None = None,
) -> BuildResult:
    """One training example for the entry, or a Skip with the reason.

    With a reference answer the full top-k stays in the source. Without
    one, a uniformly drawn correct candidate from the top-k becomes the
    target; every source line equal to its text is dropped and lower
    ranked candidates backfill (rank k+1 first) up to k lines.
    """
    q = cset.question
    if cset.reference_answer is not None:
        inp = build_inference_input(q, ranked, k)
        return TrainingExample(
            source_text=inp.source_text,
            target_text=_require_single_line(cset.reference_answer, "reference answer", q.id),
            question_id=q.id,
            provenance=PROVENANCE_REFERENCE,
        )

    top = list(ranked.candidates()[:k])
    pool = [c for c in top if c.label is Label.CORRECT]
    if not pool:
        return Skip(q.id, f"no reference answer and no correct candidate in the top {k}")
    if rng is None:
        rng = np.random.default_rng(0)
    target = pool[int(rng.integers(len(pool)))]
    _require_single_line(target.text, f"candidate {target.id!r} text", q.id)

    source_cands = [c for c in top if c.text != target.text]
    for cand in ranked.candidates()[k:]:
        if len(source_cands) >= k:
            break
        if cand.text != target.text:
            source_cands.append(cand)

    lines = [_require_single_line(q.text, "question text", q.id)]
    for cand in source_cands:
        lines.append(_require_single_line(cand.text, f"candidate {cand.id!r} text", q.id))
    return TrainingExample(
        source_text="\n".join(lines),
        target_text=target.text,
        question_id=q.id,
        provenance=PROVENANCE_CANDIDATE,
        provenance_cid=target.id,
    )


def entry_rng(seed: int, question_id: str) -> np.random.Generator:
    """Per-entry stream keyed by (seed, question id), schedule independent."""
    digest = hashlib.sha256(question_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


@dataclass
class CorpusBuildReport:
    examples: list[TrainingExample]
    skips: list[Skip]


def build_corpus(
    dataset: Dataset,
    scorer: Scorer | UseExternalScores,
    k: int = DEFAULT_TOP_K,
    seed: int = 0,
) -> CorpusBuildReport:
    """Rank and build one example per entry; unusable entries are skipped."""
    report = CorpusBuildReport(examples=[], skips=[])
    for entry in dataset.entries:
        qid = entry.question.id
        try:
            ranked = rank(entry.question, entry, scorer)
            result = build_training_example(entry, ranked, k, entry_rng(seed, qid))
        except DataError as e:
            report.skips.append(Skip(qid, str(e)))
            continue
        if isinstance(result, Skip):
            report.skips.append(result)
        else:
            report.examples.append(result)
    return report


def encoded_source(vocab: textproc.Vocab, example_source: str, limit: int = 512) -> list[int]:
    """Token ids for a source text, truncated to the input budget."""
    return textproc.truncate(textproc.encode(vocab, example_source), limit)


def write_examples(examples: list[TrainingExample], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as f:
        for ex in examples:
            record = {
                "qid": ex.question_id,
                "source": ex.source_text,
                "target": ex.target_text,
                "provenance": (
                    ex.provenance
                    if ex.provenance_cid is None
                    else f"{ex.provenance}:{ex.provenance_cid}"
                ),
            }
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def load_examples(path: str | Path) -> list[TrainingExample]:
    examples: list[TrainingExample] = []
    p = Path(path)
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{p}:{lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON ({e.msg})", where) from None
            for key in ("qid", "source", "target", "provenance"):
                if key not in raw:
                    raise DataError(f"example record missing field {key!r}", where)
            prov, _, cid = str(raw["provenance"]).partition(":")
            if prov not in (PROVENANCE_REFERENCE, PROVENANCE_CANDIDATE):
                raise DataError(f"unknown provenance {raw['provenance']!r}", where)
            examples.append(
                TrainingExample(
                    source_text=str(raw["source"]),
                    target_text=str(raw["target"]),
                    question_id=str(raw["qid"]),
                    provenance=prov,
                    provenance_cid=cid or None,
                )
            )
    return examples
