"""Data model and JSONL ingestion for question/candidate datasets.

One record per line: {"qid", "question", "reference", "candidates":
[{"cid", "text", "label", "score"}]}. Labels serialize as 1/0/-1 for
correct/incorrect/unknown. Text is stored raw; normalization belongs to
the tokenizer.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

from .errors import DataError


class Label(enum.Enum):
    CORRECT = 1
    INCORRECT = 0
    UNKNOWN = -1

    @classmethod
    def from_int(cls, value: int) -> "Label":
        try:
            return cls(value)
        except ValueError:
            raise ValueError(f"label must be 1, 0, or -1, got {value!r}") from None


class Split(enum.Enum):
    TRAIN = "train"
    DEV = "dev"
    TEST = "test"


@dataclass(frozen=True)
class Question:
    id: str
    text: str


@dataclass(frozen=True)
class Candidate:
    id: str
    text: str
    label: Label = Label.UNKNOWN
    external_score: float | None = None


@dataclass(frozen=True)
class CandidateSet:
    """A question with its candidate sentences in retrieval order.

    `reference_answer` is a human-composed answer when one exists; it is
    the preferred generation target.
    """

    question: Question
    candidates: tuple[Candidate, ...]
    reference_answer: str | None = None

    def correct_candidates(self) -> tuple[Candidate, ...]:
        return tuple(c for c in self.candidates if c.label is Label.CORRECT)


@dataclass(frozen=True)
class Dataset:
    name: str
    split: Split
    entries: tuple[CandidateSet, ...]

    def __iter__(self) -> Iterator[CandidateSet]:
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def by_question_id(self) -> dict[str, CandidateSet]:
        return {e.question.id: e for e in self.entries}


@dataclass(frozen=True)
class Violation:
    location: str
    message: str


@dataclass
class ValidationReport:
    """Invariant violations plus advisory notes.

    The report is empty (valid data) when there are no violations;
    advisories flag entries other stages will skip, not broken data.
    """

    violations: list[Violation] = field(default_factory=list)
    advisories: list[Violation] = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.violations


class DatasetFormat(enum.Enum):
    AS2_JSONL = "as2jsonl"


def _parse_candidate(raw: dict, where: str) -> Candidate:
    for key in ("cid", "text", "label"):
        if key not in raw:
            raise DataError(f"candidate missing field {key!r}", where)
    score = raw.get("score")
    if score is not None:
        score = float(score)
        if not math.isfinite(score):
            raise DataError(f"non-finite score for candidate {raw['cid']!r}", where)
    return Candidate(
        id=str(raw["cid"]),
        text=str(raw["text"]),
        label=Label.from_int(raw["label"]),
        external_score=score,
    )


def _parse_entry(raw: dict, where: str) -> CandidateSet:
    for key in ("qid", "question", "candidates"):
        if key not in raw:
            raise DataError(f"record missing field {key!r}", where)
    candidates = raw["candidates"]
    if not isinstance(candidates, list) or not candidates:
        raise DataError("record has an empty candidate list", where)
    reference = raw.get("reference")
    return CandidateSet(
        question=Question(id=str(raw["qid"]), text=str(raw["question"])),
        candidates=tuple(_parse_candidate(c, where) for c in candidates),
        reference_answer=None if reference is None else str(reference),
    )


def load_dataset(
    path: str | Path,
    format: DatasetFormat = DatasetFormat.AS2_JSONL,
    name: str | None = None,
    split: Split = Split.TEST,
) -> Dataset:
    """Parse a line-delimited dataset file, preserving entry order.

    Raises DataError naming the offending line for malformed records,
    duplicate question ids, or empty candidate lists.
    """
    if format is not DatasetFormat.AS2_JSONL:
        raise ValueError(f"unsupported format: {format}")
    p = Path(path)
    entries: list[CandidateSet] = []
    seen_qids: set[str] = set()
    with p.open("r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip("\n")
            if not line.strip():
                continue
            where = f"{p}:{lineno}"
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"invalid JSON ({e.msg})", where) from None
            if not isinstance(raw, dict):
                raise DataError("record is not a JSON object", where)
            entry = _parse_entry(raw, where)
            if entry.question.id in seen_qids:
                raise DataError(f"duplicate question id {entry.question.id!r}", where)
            seen_qids.add(entry.question.id)
            entries.append(entry)
    return Dataset(name=name or p.stem, split=split, entries=tuple(entries))


def _entry_record(entry: CandidateSet) -> dict:
    return {
        "qid": entry.question.id,
        "question": entry.question.text,
        "reference": entry.reference_answer,
        "candidates": [
            {
                "cid": c.id,
                "text": c.text,
                "label": c.label.value,
                "score": c.external_score,
            }
            for c in entry.candidates
        ],
    }


def write_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write one JSON record per entry; parses back to an equal dataset."""
    with Path(path).open("w", encoding="utf-8") as f:
        for entry in dataset.entries:
            f.write(json.dumps(_entry_record(entry), ensure_ascii=False))
            f.write("\n")


def validate(dataset: Dataset) -> ValidationReport:
    """Check every type invariant; violations are data, not exceptions."""
    report = ValidationReport()
    seen_qids: set[str] = set()
    for entry in dataset.entries:
        q = entry.question
        where = f"question {q.id!r}"
        if q.id in seen_qids:
            report.violations.append(Violation(where, "duplicate question id"))
        seen_qids.add(q.id)
        if not q.text.strip():
            report.violations.append(Violation(where, "question text is empty"))
        if not entry.candidates:
            report.violations.append(Violation(where, "candidate list is empty"))
        seen_cids: set[str] = set()
        for c in entry.candidates:
            if c.id in seen_cids:
                report.violations.append(
                    Violation(where, f"duplicate candidate id {c.id!r}")
                )
            seen_cids.add(c.id)
            if not c.text.strip():
                report.violations.append(
                    Violation(where, f"candidate {c.id!r} text is empty")
                )
            if c.external_score is not None and not math.isfinite(c.external_score):
                report.violations.append(
                    Violation(where, f"candidate {c.id!r} score is not finite")
                )
        if entry.reference_answer is None and not any(
            c.label is Label.CORRECT for c in entry.candidates
        ):
            note = (
                "unusable for supervised target selection"
                if all(c.label is Label.UNKNOWN for c in entry.candidates)
                else "no correct candidate and no reference answer"
            )
            report.advisories.append(Violation(where, note))
        multiline = [
            part
            for part in ([("question", q.text)] + [(f"candidate {c.id!r}", c.text) for c in entry.candidates])
            if "\n" in part[1]
        ]
        for what, _ in multiline:
            report.advisories.append(
                Violation(where, f"{what} contains a literal newline; generation stages skip it")
            )
    return report


def with_external_score(entry: CandidateSet, cid: str, score: float) -> CandidateSet:
    """Copy of `entry` with one candidate's external score set."""
    return replace(
        entry,
        candidates=tuple(
            replace(c, external_score=score) if c.id == cid else c
            for c in entry.candidates
        ),
    )
