from __future__ import annotations

import pytest

from genqa.corpus import Candidate, CandidateSet, Dataset, Label, Question, Split

WATER_PUMP_QUESTION = "How a water pump works?"
WATER_PUMP_CANDIDATES = [
    "A small, electrically powered pump.",
    "A large, electrically driven pump (electropump) for waterworks near the Hengsteysee, Germany.",
    "A pump is a device that moves fluids (liquids or gases), or sometimes slurries, by mechanical action.",
    "Pumps can be classified into three major groups according to the method they use to move the fluid: direct lift, displacement, and gravity pumps.",
    "Pumps operate by some mechanism (typically reciprocating or rotary), and consume energy to perform mechanical work by moving the fluid.",
]
WATER_PUMP_REFERENCE = "A water pump is a device that moves fluids by mechanical action."


def water_pump_entry(with_reference: bool = True, with_scores: bool = True) -> CandidateSet:
    labels = [Label.INCORRECT, Label.INCORRECT, Label.CORRECT, Label.INCORRECT, Label.INCORRECT]
    scores = [0.95, 0.90, 0.85, 0.80, 0.75]
    return CandidateSet(
        question=Question(id="wq1", text=WATER_PUMP_QUESTION),
        candidates=tuple(
            Candidate(
                id=f"c{i + 1}",
                text=text,
                label=labels[i],
                external_score=scores[i] if with_scores else None,
            )
            for i, text in enumerate(WATER_PUMP_CANDIDATES)
        ),
        reference_answer=WATER_PUMP_REFERENCE if with_reference else None,
    )


@pytest.fixture
def water_pump() -> CandidateSet:
    return water_pump_entry()


@pytest.fixture
def water_pump_dataset() -> Dataset:
    return Dataset(name="fixture", split=Split.TEST, entries=(water_pump_entry(),))
