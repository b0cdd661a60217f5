"""Model views: anything exposing next-token log-probabilities over a vocabulary."""

from __future__ import annotations

from typing import Callable, Iterator, Protocol, Sequence as Seq

import numpy as np

from ..seqcore import Vocabulary

NEG_INF = -np.inf


class ModelView(Protocol):
    vocab: Vocabulary

    def next_logprobs(self, prefix: tuple[int, ...]) -> np.ndarray: ...

    def next_logprobs_batch(self, prefixes: Seq[tuple[int, ...]]) -> np.ndarray: ...


class JointModel(ModelView, Protocol):
    n_outputs: int

    def predict(self, seq: tuple[int, ...]) -> np.ndarray: ...


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Log-softmax that keeps -inf entries at -inf and never divides by zero."""
    logits = np.asarray(logits, dtype=np.float64)
    m = np.max(logits, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = logits - m
    with np.errstate(divide="ignore"):
        lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    # a fully masked row stays fully masked
    return np.where(np.isfinite(lse), shifted - np.where(np.isfinite(lse), lse, 0.0), NEG_INF)


class BatchMixin:
    """Default batched evaluation by looping; backends override when they can vectorize."""

    def next_logprobs_batch(self, prefixes):
        if not prefixes:
            return np.zeros((0, self.vocab.size))
        return np.stack([self.next_logprobs(tuple(p)) for p in prefixes])


class TemperedView(BatchMixin):
    """Temperature-scaled, length-capped view of a model.

    ``logits / temperature`` are renormalized; -inf stays -inf. Prefixes of
    length ``max_len - 1`` may only emit EOS so every path terminates.
    """

    def __init__(self, model, temperature: float = 1.0, max_len: int | None = None):
        if temperature <= 0:
            raise ValueError("temperature must be > 0")
        self.model = model
        self.vocab = model.vocab
        self.temperature = float(temperature)
        self.max_len = max_len if max_len is not None else getattr(model, "max_len", None)
        if self.max_len is None or self.max_len < 1:
            raise ValueError("a finite max_len >= 1 is required")
        eos_row = np.full(self.vocab.size, NEG_INF)
        eos_row[self.vocab.eos_index] = 0.0
        self._eos_row = eos_row

    def _adjust(self, rows: np.ndarray) -> np.ndarray:
        if self.temperature == 1.0:
            return rows
        return log_softmax(rows / self.temperature)

    def next_logprobs(self, prefix):
        if len(prefix) >= self.max_len - 1:
            return self._eos_row.copy()
        return self._adjust(np.asarray(self.model.next_logprobs(tuple(prefix)), dtype=np.float64))

    def next_logprobs_batch(self, prefixes):
        prefixes = [tuple(p) for p in prefixes]
        out = np.empty((len(prefixes), self.vocab.size))
        open_ix = [i for i, p in enumerate(prefixes) if len(p) < self.max_len - 1]
        out[:] = self._eos_row
        if open_ix:
            if hasattr(self.model, "next_logprobs_batch"):
                rows = self.model.next_logprobs_batch([prefixes[i] for i in open_ix])
            else:
                rows = np.stack([self.model.next_logprobs(prefixes[i]) for i in open_ix])
            out[open_ix] = self._adjust(np.asarray(rows, dtype=np.float64))
        return out

    def predict(self, seq):
        return self.model.predict(seq)


class CountingView(BatchMixin):
    """Wraps a view and counts how many prefixes were evaluated."""

    def __init__(self, view):
        self.view = view
        self.vocab = view.vocab
        self.max_len = getattr(view, "max_len", None)
        self.calls = 0

    def next_logprobs(self, prefix):
        self.calls += 1
        return self.view.next_logprobs(prefix)

    def next_logprobs_batch(self, prefixes):
        self.calls += len(prefixes)
        return self.view.next_logprobs_batch(prefixes)


def sequence_logprob(view, seq: Seq[int]) -> float:
    """Sum of next-token log-probabilities along ``seq``, EOS step included."""
    seq = tuple(seq)
    prefixes = [seq[:t] for t in range(len(seq))]
    rows = view.next_logprobs_batch(prefixes)
    return float(np.sum(rows[np.arange(len(seq)), list(seq)]))


def step_logprobs(view, seq: Seq[int]) -> np.ndarray:
    """Per-step conditional log-probabilities of ``seq`` under ``view``."""
    seq = tuple(seq)
    rows = view.next_logprobs_batch([seq[:t] for t in range(len(seq))])
    return rows[np.arange(len(seq)), list(seq)]


def enumerate_support(view, max_len: int, limit: int = 200_000,
                      prefix: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], float]]:
    """Depth-first enumeration of every completed sequence with nonzero probability.

    Yields ``(sequence, logprob)`` where logprob is conditional on ``prefix``.
    Raises ``OverflowError`` past ``limit`` sequences.
    """
    eos = view.vocab.eos_index
    count = 0
    stack = [(tuple(prefix), 0.0)]
    while stack:
        pre, lp = stack.pop()
        row = view.next_logprobs(pre)
        for tok in range(len(row) - 1, -1, -1):
            if row[tok] == NEG_INF:
                continue
            nxt = pre + (tok,)
            if tok == eos:
                count += 1
                if count > limit:
                    raise OverflowError(f"support larger than {limit} sequences")
                yield nxt, lp + row[tok]
            elif len(nxt) < max_len:
                stack.append((nxt, lp + row[tok]))


def categorical(logprob_rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row by inverse CDF; never lands on a zero-probability slot."""
    probs = np.exp(logprob_rows)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(len(probs)) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    last_pos = probs.shape[1] - 1 - np.argmax(probs[:, ::-1] > 0, axis=1)
    return np.minimum(idx, last_pos)


def sample_sequences(view, n: int, rng: np.random.Generator, max_len: int | None = None) -> list[tuple[int, ...]]:
    """Ancestral i.i.d. sampling (with replacement), vectorized across the batch."""
    max_len = max_len or view.max_len
    eos = view.vocab.eos_index
    seqs: list[list[int]] = [[] for _ in range(n)]
    live = list(range(n))
    while live:
        rows = view.next_logprobs_batch([tuple(seqs[i]) for i in live])
        toks = categorical(rows, rng)
        nxt = []
        for i, tok in zip(live, toks):
            seqs[i].append(int(tok))
            if tok == eos:
                continue
            if len(seqs[i]) >= max_len:
                raise RuntimeError("view did not terminate within max_len")
            nxt.append(i)
        live = nxt
    return [tuple(s) for s in seqs]


ScoreCallable = Callable[[tuple[int, ...]], float]
