"""Greedy and beam-search decoding, plus the end-to-end generate call.

Scores are raw sums of per-step log-probabilities (no length
normalization). Hypotheses finish when they emit EOS; the highest-scoring
finished hypothesis wins, falling back to the best unfinished one at the
length limit. All ties break toward the lexicographically smaller id
sequence, which makes beam size one identical to greedy decoding.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import textproc
from .corpus import CandidateSet, Question
from .errors import DataError
from .genbuild import DEFAULT_TOP_K, build_inference_input
from .model import ModelParams, decoder_logits, encoder_state, pad_batch
from .selector import Scorer, UseExternalScores, rank
from .textproc import BOS_ID, EOS_ID, Vocab

DEFAULT_BEAM_SIZE = 4
DEFAULT_MAX_LEN = 100


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = DEFAULT_BEAM_SIZE
    max_len: int = DEFAULT_MAX_LEN

    def __post_init__(self) -> None:
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


@dataclass(frozen=True)
class GeneratedAnswer:
    question_id: str
    ids: tuple[int, ...]
    text: str
    log_score: float


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(-1, keepdims=True))


def _finalize(
    question_id: str, ids: Sequence[int], score: float, vocab: Vocab | None
) -> GeneratedAnswer:
    text = textproc.decode(vocab, ids) if vocab is not None else ""
    return GeneratedAnswer(
        question_id=question_id, ids=tuple(ids), text=text, log_score=float(score)
    )


def beam_search(
    params: ModelParams,
    source_ids: Sequence[int],
    cfg: DecodeConfig = DecodeConfig(),
    vocab: Vocab | None = None,
    question_id: str = "",
) -> GeneratedAnswer:
    """Best EOS-terminated hypothesis within beam_size and max_len.

    At every step all (hypothesis, token) expansions compete for
    beam_size slots by (score, id-sequence); expansions that chose EOS
    retire into the finished pool, the rest form the next beam.
    """
    enc_out, src_valid = encoder_state(params, source_ids)
    active: list[tuple[tuple[int, ...], float]] = [((), 0.0)]
    finished: list[tuple[float, tuple[int, ...]]] = []
    # the decoder input (BOS + prefix) must fit the trained position budget
    max_steps = min(cfg.max_len, params.config.max_target_len)
    for _ in range(max_steps):
        if not active:
            break
        tgt_in = pad_batch([(BOS_ID,) + ids for ids, _ in active])
        logp = _log_softmax(decoder_logits(params, enc_out, src_valid, tgt_in)[:, -1, :])
        expansions: list[tuple[float, tuple[int, ...]]] = []
        for (ids, score), row in zip(active, logp):
            expansions.extend(
                (score + row[token], ids + (token,))
                for token in range(row.shape[0])
            )
        expansions.sort(key=lambda e: (-e[0], e[1]))
        kept = expansions[: cfg.beam_size]
        active = []
        for score, ids in kept:
            if ids[-1] == EOS_ID:
                finished.append((score, ids))
            else:
                active.append((ids, score))
    if finished:
        score, ids = min(finished, key=lambda e: (-e[0], e[1]))
        return _finalize(question_id, ids, score, vocab)
    score, ids = min(
        ((score, ids) for ids, score in active), key=lambda e: (-e[0], e[1])
    )
    return _finalize(question_id, ids, score, vocab)


def greedy(
    params: ModelParams,
    source_ids: Sequence[int],
    max_len: int = DEFAULT_MAX_LEN,
    vocab: Vocab | None = None,
    question_id: str = "",
) -> GeneratedAnswer:
    """Argmax token per step until EOS or max_len."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    enc_out, src_valid = encoder_state(params, source_ids)
    ids: list[int] = []
    score = 0.0
    for _ in range(min(max_len, params.config.max_target_len)):
        tgt_in = pad_batch([[BOS_ID] + ids])
        logp = _log_softmax(decoder_logits(params, enc_out, src_valid, tgt_in)[0, -1, :])
        token = int(np.argmax(logp))
        score += float(logp[token])
        ids.append(token)
        if token == EOS_ID:
            break
    return _finalize(question_id, ids, score, vocab)


def prepare_source(
    params: ModelParams, vocab: Vocab, source_text: str, truncate_limit: int | None = None
) -> list[int]:
    limit = params.config.max_source_len
    if truncate_limit is not None:
        limit = min(limit, truncate_limit)
    return textproc.truncate(textproc.encode(vocab, source_text), limit)


def generate(
    params: ModelParams,
    q: Question,
    cset: CandidateSet,
    scorer: Scorer | UseExternalScores,
    vocab: Vocab,
    k: int = DEFAULT_TOP_K,
    cfg: DecodeConfig = DecodeConfig(),
    truncate_limit: int | None = None,
) -> GeneratedAnswer:
    """Rank, build the k-line input, encode, truncate, beam-decode."""
    ranked = rank(q, cset, scorer)
    gen_input = build_inference_input(q, ranked, k)
    source_ids = prepare_source(params, vocab, gen_input.source_text, truncate_limit)
    return beam_search(params, source_ids, cfg, vocab=vocab, question_id=q.id)


def write_generations(
    answers: Sequence[GeneratedAnswer], path: str | Path, system: str = "genqa"
) -> None:
    """Line-delimited {"qid", "answer", "log_score", "system"} records."""
    with Path(path).open("w", encoding="utf-8") as f:
        for a in answers:
            record = {
                "qid": a.question_id,
                "answer": a.text,
                "log_score": a.log_score,
                "system": system,
            }
            f.write(json.dumps(record, ensure_ascii=False))
            f.write("\n")


def load_generations(path: str | Path) -> list[dict]:
    records: list[dict] = []
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
            if "qid" not in raw or "answer" not in raw:
                raise DataError("generation record needs qid and answer", where)
            records.append(raw)
    return records
