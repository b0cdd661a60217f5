"""Vocabulary, sequence and dataset primitives plus seeded randomness.

Sequences are plain tuples of token indices. BOS is a decoding state and is
never stored; EOS is always the last stored index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence as Seq

import numpy as np

DEFAULT_MAX_LEN = 24
RNG_ALGORITHM = "PCG64"


class ConfigError(ValueError):
    """Invalid configuration or malformed input."""


class SequenceError(ValueError):
    """A token list that violates the sequence invariants."""


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    bos_index: int = 0
    eos_index: int = 1

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise ConfigError("vocabulary tokens must be distinct")
        if len(self.tokens) < 3:
            raise ConfigError("vocabulary needs BOS, EOS and at least one content token")
        size = len(self.tokens)
        if not (0 <= self.bos_index < size and 0 <= self.eos_index < size):
            raise ConfigError("BOS/EOS index out of range")
        if self.bos_index == self.eos_index:
            raise ConfigError("BOS and EOS must differ")
        object.__setattr__(self, "_lookup", {t: i for i, t in enumerate(self.tokens)})

    @classmethod
    def from_content(cls, content: Iterable[str], bos: str = "<bos>", eos: str = "<eos>") -> "Vocabulary":
        return cls((bos, eos, *content), 0, 1)

    @classmethod
    def letters(cls, n: int) -> "Vocabulary":
        """Vocabulary with ``n`` content tokens named A, B, C, ..."""
        if not 1 <= n <= 26:
            raise ConfigError("letters() supports 1..26 content tokens")
        return cls.from_content([chr(ord("A") + i) for i in range(n)])

    @property
    def size(self) -> int:
        return len(self.tokens)

    @property
    def content_indices(self) -> list[int]:
        return [i for i in range(self.size) if i not in (self.bos_index, self.eos_index)]

    @property
    def emittable_indices(self) -> list[int]:
        return [i for i in range(self.size) if i != self.bos_index]

    def index(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]
        except KeyError:
            raise SequenceError(f"unknown token symbol {symbol!r}") from None

    def encode(self, symbols: Iterable[str], max_len: int | None = None) -> tuple[int, ...]:
        """Encode symbols; appends EOS when the input does not end with it."""
        idx = [self.index(s) for s in symbols]
        if not idx or idx[-1] != self.eos_index:
            idx.append(self.eos_index)
        return make_sequence(idx, self, max_len)

    def decode(self, seq: Seq[int], keep_eos: bool = False) -> list[str]:
        out = [self.tokens[i] for i in seq]
        if not keep_eos and seq and seq[-1] == self.eos_index:
            out = out[:-1]
        return out

    def to_text(self, seq: Seq[int]) -> str:
        return " ".join(self.decode(seq))


def make_sequence(indices: Iterable[int], vocab: Vocabulary, max_len: int | None = None) -> tuple[int, ...]:
    """Validate ``indices`` and return them as an immutable sequence."""
    seq = tuple(int(i) for i in indices)
    if not seq:
        raise SequenceError("empty sequence (EOS is required)")
    for i in seq:
        if not 0 <= i < vocab.size:
            raise SequenceError(f"token index {i} out of range for vocabulary of size {vocab.size}")
        if i == vocab.bos_index:
            raise SequenceError("BOS is implicit and may not be stored")
    if seq[-1] != vocab.eos_index:
        raise SequenceError("sequence must end with EOS")
    if vocab.eos_index in seq[:-1]:
        raise SequenceError("EOS before the last position")
    if max_len is not None and len(seq) > max_len:
        raise SequenceError(f"sequence length {len(seq)} exceeds T_max={max_len}")
    return seq


@dataclass(frozen=True)
class LabeledExample:
    sequence: tuple[int, ...]
    scores: np.ndarray = field(compare=False)

    def __post_init__(self):
        s = np.atleast_1d(np.asarray(self.scores, dtype=np.float64))
        if s.ndim != 1 or s.size < 1:
            raise ConfigError("scores must be a non-empty vector")
        if not np.all(np.isfinite(s)):
            raise ConfigError("scores must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "scores", s)


def make_rng(seed: int) -> np.random.Generator:
    """Reproducible generator; identical seed and call order give an identical stream."""
    return np.random.Generator(np.random.PCG64(int(seed) & ((1 << 64) - 1)))


def derive_rng(seed: int, stream: int) -> np.random.Generator:
    """Independent generator for one named purpose (data, training, sampling) of a run."""
    ss = np.random.SeedSequence([int(seed) & ((1 << 64) - 1), int(stream)])
    return np.random.Generator(np.random.PCG64(ss))


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(data: list[LabeledExample], fraction: float, rng: np.random.Generator):
    """Random disjoint split into (train, eval) with ``round_half_up(fraction*n)`` train items."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must be in (0, 1), got {fraction}")
    if not data:
        raise ConfigError("cannot split an empty dataset")
    n_train = round_half_up(fraction * len(data))
    perm = rng.permutation(len(data))
    train = [data[i] for i in perm[:n_train]]
    held = [data[i] for i in perm[n_train:]]
    return train, held


def kmer_set(seq: Seq[int], k: int, eos_index: int | None = None) -> set[tuple[int, ...]]:
    """All contiguous length-``k`` windows over the content tokens (EOS excluded)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    content = tuple(seq)
    if eos_index is None or (content and content[-1] == eos_index):
        content = content[:-1]
    return {content[i:i + k] for i in range(len(content) - k + 1)}


# -- dataset files -----------------------------------------------------------

def read_dataset(path: str | Path, vocab: Vocabulary, max_len: int | None = None) -> list[LabeledExample]:
    """Read ``<tokens><TAB><scores>`` lines. Errors name the offending line."""
    path = Path(path)
    out: list[LabeledExample] = []
    n_scores = None
    with path.open(encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"{path}:{lineno}: expected '<tokens>\\t<scores>'")
            try:
                seq = vocab.encode(parts[0].split(), max_len)
                scores = [float(v) for v in parts[1].split(",")]
                ex = LabeledExample(seq, scores)
            except (SequenceError, ConfigError, ValueError) as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
            if n_scores is None:
                n_scores = ex.scores.size
            elif ex.scores.size != n_scores:
                raise ConfigError(f"{path}:{lineno}: expected {n_scores} scores, got {ex.scores.size}")
            out.append(ex)
    return out


def write_dataset(path: str | Path, data: Iterable[LabeledExample], vocab: Vocabulary) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in data:
            scores = ",".join(repr(float(v)) for v in ex.scores)
            fh.write(f"{vocab.to_text(ex.sequence)}\t{scores}\n")
