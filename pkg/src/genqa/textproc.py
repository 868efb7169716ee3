"""Deterministic word-level tokenizer and vocabulary.

Shared by the example builder, the model, and token-level metrics so that
every component counts tokens the same way. Newlines are first-class: a
literal "\\n" tokenizes to the separator glyph so the model can see
candidate boundaries in multi-line inputs.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SEP_ID = 4

PAD_TOKEN = "<pad>"
BOS_TOKEN = "<bos>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"
SEP_TOKEN = "⏎"  # rendering of a newline

RESERVED_TOKENS = (PAD_TOKEN, BOS_TOKEN, EOS_TOKEN, UNK_TOKEN, SEP_TOKEN)

DEFAULT_TRUNCATE_LIMIT = 512

# A token is a maximal run of word characters, or a maximal run of
# non-word non-space characters (punctuation sticks together: "!!" is one
# token, "pump." splits into two).
_TOKEN_RE = re.compile(r"\w+|[^\w\s]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split into word/punctuation tokens.

    Each literal newline becomes its own separator token; all other
    whitespace only delimits.
    """
    tokens: list[str] = []
    for i, segment in enumerate(text.split("\n")):
        if i:
            tokens.append(SEP_TOKEN)
        tokens.extend(_TOKEN_RE.findall(segment.lower()))
    return tokens


@dataclass(frozen=True)
class Vocab:
    """Bijective token <-> id map with five reserved ids."""

    id_to_token: tuple[str, ...]
    token_to_id: dict[str, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self.id_to_token[token_id]

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id


def _make_vocab(tokens: Sequence[str]) -> Vocab:
    id_to_token = RESERVED_TOKENS + tuple(tokens)
    return Vocab(id_to_token, {t: i for i, t in enumerate(id_to_token)})


def build_vocab(corpus: Iterable[str], max_size: int = 4096, min_freq: int = 1) -> Vocab:
    """Frequency-ordered vocabulary over tokenized corpus strings.

    Ties break lexicographically; `max_size` includes the reserved ids.
    The newline separator never gets a fresh id (it is reserved).
    """
    if max_size <= len(RESERVED_TOKENS):
        raise ValueError(f"max_size must exceed {len(RESERVED_TOKENS)}, got {max_size}")
    counts: Counter[str] = Counter()
    for text in corpus:
        counts.update(t for t in tokenize(text) if t not in RESERVED_TOKENS)
    admitted = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return _make_vocab(admitted[: max_size - len(RESERVED_TOKENS)])


def encode(vocab: Vocab, text: str) -> list[int]:
    """Token ids for `text`, unknown tokens mapping to UNK.

    No BOS/EOS framing is added; callers own sequence framing.
    """
    return [vocab.id_of(t) for t in tokenize(text)]


def decode(vocab: Vocab, ids: Sequence[int]) -> str:
    """Surface string for `ids`: stops at the first EOS, drops PAD/BOS."""
    tokens: list[str] = []
    for i in ids:
        if not 0 <= i < len(vocab):
            raise ValueError(f"token id {i} out of range for vocab of size {len(vocab)}")
        if i == EOS_ID:
            break
        if i in (PAD_ID, BOS_ID):
            continue
        tokens.append(vocab.token_of(i))
    return " ".join(tokens)


def truncate(seq: Sequence[int], limit: int = DEFAULT_TRUNCATE_LIMIT) -> list[int]:
    """First `limit` ids of `seq`."""
    if limit < 1:
        raise ValueError(f"truncate limit must be >= 1, got {limit}")
    return list(seq[:limit])


def save_vocab(vocab: Vocab, path: str | Path) -> None:
    Path(path).write_text("\n".join(vocab.id_to_token) + "\n", encoding="utf-8")


def load_vocab(path: str | Path) -> Vocab:
    lines = Path(path).read_text(encoding="utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if tuple(lines[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
        raise ValueError(f"{path}: vocab file must start with the reserved tokens")
    return _make_vocab(lines[len(RESERVED_TOKENS) :])
