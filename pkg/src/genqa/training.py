"""Training loop, learning-rate presets, and multi-dataset schedules.

The optimizer is plain SGD at a fixed rate over seed-shuffled
mini-batches. Two-dataset regimes are expressed as schedules: "mixed"
strictly alternates batches between the two corpora, "sequential" runs a
full phase on the first and then adapts on the second.
"""

from __future__ import annotations

import enum
import hashlib
import zlib
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import textproc
from .genbuild import TrainingExample
from .model import ModelConfig, ModelParams, init_model, loss_and_grad
from .textproc import EOS_ID, Vocab

UQAT5_LEARNING_RATE = 5e-5
BART_LEARNING_RATE = 5e-6


class LrPreset(enum.Enum):
    UQAT5 = "uqat5"
    BART = "bart"
    CUSTOM = "custom"


_PRESET_RATES = {
    LrPreset.UQAT5: UQAT5_LEARNING_RATE,
    LrPreset.BART: BART_LEARNING_RATE,
}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = UQAT5_LEARNING_RATE
    batch_size: int = 8
    steps: int = 100
    seed: int = 0
    preset: LrPreset = LrPreset.CUSTOM

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.preset in _PRESET_RATES and self.learning_rate != _PRESET_RATES[self.preset]:
            raise ValueError(
                f"preset {self.preset.value} requires learning_rate "
                f"{_PRESET_RATES[self.preset]!r}"
            )

    @classmethod
    def from_preset(
        cls, preset: LrPreset, *, learning_rate: float | None = None, **kwargs
    ) -> "TrainConfig":
        if preset is LrPreset.CUSTOM:
            if learning_rate is None:
                raise ValueError("custom preset requires an explicit learning_rate")
            return cls(learning_rate=learning_rate, preset=preset, **kwargs)
        return cls(learning_rate=_PRESET_RATES[preset], preset=preset, **kwargs)


@dataclass(frozen=True)
class StrategySpec:
    """Single(A) | Mixed(A, B) | Sequential(A then B).

    Tags name entries in the dataset mapping handed to run_strategy; the
    two slots of mixed/sequential may resolve to the same corpus, in
    which case batches are drawn from one shared stream.
    """

    kind: str  # "single" | "mixed" | "sequential"
    dataset_a: str
    dataset_b: str | None = None
    phase_a: TrainConfig = field(default_factory=TrainConfig)
    phase_b: TrainConfig | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("single", "mixed", "sequential"):
            raise ValueError(f"unknown strategy kind {self.kind!r}")
        if self.kind in ("mixed", "sequential") and self.dataset_b is None:
            raise ValueError(f"{self.kind} strategy needs a second dataset")
        if self.kind == "sequential" and self.phase_b is None:
            raise ValueError("sequential strategy needs a second-phase config")

    def total_steps(self) -> int:
        if self.kind == "sequential":
            assert self.phase_b is not None
            return self.phase_a.steps + self.phase_b.steps
        return self.phase_a.steps


def make_schedule(
    strategy: StrategySpec, steps: int, seed: int = 0
) -> list[tuple[str, int]]:
    """(dataset tag, per-dataset batch ordinal) for each training step.

    Deterministic; the seed parameter is accepted for interface stability
    but current schedules do not draw randomness.
    """
    del seed
    if steps < 0:
        raise ValueError("steps must be >= 0")
    counters: dict[str, int] = {}

    def take(tag: str) -> tuple[str, int]:
        ordinal = counters.get(tag, 0)
        counters[tag] = ordinal + 1
        return (tag, ordinal)

    if strategy.kind == "single":
        return [take(strategy.dataset_a) for _ in range(steps)]
    if strategy.kind == "mixed":
        assert strategy.dataset_b is not None
        tags = (strategy.dataset_a, strategy.dataset_b)
        return [take(tags[i % 2]) for i in range(steps)]
    assert strategy.phase_b is not None
    if steps != strategy.total_steps():
        raise ValueError(
            f"sequential schedule is {strategy.total_steps()} steps "
            f"({strategy.phase_a.steps}+{strategy.phase_b.steps}), got {steps}"
        )
    return [take(strategy.dataset_a) for _ in range(strategy.phase_a.steps)] + [
        take(strategy.dataset_b) for _ in range(strategy.phase_b.steps)
    ]


def encode_example(
    example: TrainingExample, vocab: Vocab, config: ModelConfig
) -> tuple[list[int], list[int]]:
    """(source ids, label ids): truncated source, EOS-terminated target."""
    src = textproc.truncate(
        textproc.encode(vocab, example.source_text), config.max_source_len
    )
    tgt = textproc.truncate(
        textproc.encode(vocab, example.target_text), config.max_target_len - 1
    )
    return src, tgt + [EOS_ID]


def _stream_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def _batch_stream(
    n: int, batch_size: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """Endless mini-batch index stream over epoch-level shuffles."""
    while True:
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield order[start : start + batch_size]


def _run_steps(
    params: ModelParams,
    schedule: Sequence[tuple[str, int]],
    encoded: Mapping[str, list[tuple[list[int], list[int]]]],
    streams: Mapping[str, Iterator[np.ndarray]],
    rates: Mapping[str, float],
    dropout_rng: np.random.Generator | None,
) -> tuple[ModelParams, list[float]]:
    out = params.copy()
    curve: list[float] = []
    for tag, _ in schedule:
        indices = next(streams[tag])
        batch = [encoded[tag][i] for i in indices]
        value, grads = loss_and_grad(out, batch, dropout_rng)
        lr = rates[tag]
        for name, g in grads.items():
            out.tensors[name] -= lr * g
        curve.append(value)
    return out, curve


def train(
    params: ModelParams,
    examples: Sequence[TrainingExample],
    vocab: Vocab,
    tconf: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    """SGD over seed-shuffled mini-batches; returns new params + loss curve."""
    if not examples:
        raise ValueError("train needs at least one example")
    return _train_on_tag(params, "train", examples, vocab, tconf)


def _train_on_tag(
    params: ModelParams,
    tag: str,
    examples: Sequence[TrainingExample],
    vocab: Vocab,
    tconf: TrainConfig,
) -> tuple[ModelParams, list[float]]:
    encoded = {tag: [encode_example(e, vocab, params.config) for e in examples]}
    streams = {
        tag: _batch_stream(
            len(examples),
            tconf.batch_size,
            np.random.default_rng([tconf.seed, _stream_key(tag)]),
        )
    }
    dropout_rng = (
        np.random.default_rng([tconf.seed, 0xD0]) if params.config.dropout > 0 else None
    )
    schedule = [(tag, i) for i in range(tconf.steps)]
    return _run_steps(
        params, schedule, encoded, streams, {tag: tconf.learning_rate}, dropout_rng
    )


def run_strategy(
    config: ModelConfig,
    strategy: StrategySpec,
    datasets: Mapping[str, Sequence[TrainingExample]],
    vocab: Vocab,
    model_seed: int,
) -> tuple[ModelParams, list[float]]:
    """Initialize a model and train it per the strategy's schedule.

    Sequential phase two continues from phase one's final parameters.
    Mixed batch streams are keyed by dataset tag, so two slots naming the
    same tag consume one shared stream.
    """
    tags = [strategy.dataset_a] + (
        [strategy.dataset_b] if strategy.dataset_b is not None else []
    )
    for tag in tags:
        if tag not in datasets:
            raise KeyError(f"strategy references unknown dataset {tag!r}")
        if not datasets[tag]:
            raise ValueError(f"dataset {tag!r} is empty")

    params = init_model(config, model_seed)
    if strategy.kind == "single":
        return _train_on_tag(
            params, strategy.dataset_a, datasets[strategy.dataset_a], vocab, strategy.phase_a
        )
    if strategy.kind == "sequential":
        assert strategy.dataset_b is not None and strategy.phase_b is not None
        phase1, curve1 = _train_on_tag(
            params, strategy.dataset_a, datasets[strategy.dataset_a], vocab, strategy.phase_a
        )
        phase2, curve2 = _train_on_tag(
            phase1, strategy.dataset_b, datasets[strategy.dataset_b], vocab, strategy.phase_b
        )
        return phase2, curve1 + curve2

    assert strategy.dataset_b is not None
    tconf = strategy.phase_a
    unique_tags = dict.fromkeys(tags)
    encoded = {
        tag: [encode_example(e, vocab, config) for e in datasets[tag]]
        for tag in unique_tags
    }
    streams = {
        tag: _batch_stream(
            len(datasets[tag]),
            tconf.batch_size,
            np.random.default_rng([tconf.seed, _stream_key(tag)]),
        )
        for tag in unique_tags
    }
    rates = {tag: tconf.learning_rate for tag in unique_tags}
    dropout_rng = (
        np.random.default_rng([tconf.seed, 0xD0]) if config.dropout > 0 else None
    )
    schedule = make_schedule(strategy, strategy.total_steps())
    return _run_steps(params, schedule, encoded, streams, rates, dropout_rng)


def example_fingerprint(examples: Sequence[TrainingExample]) -> str:
    """Stable digest of a training corpus, for run manifests."""
    h = hashlib.sha256()
    for e in examples:
        h.update(e.source_text.encode("utf-8"))
        h.update(b"\x00")
        h.update(e.target_text.encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()
