"""Exact tabular joint model: finite-context conditional tables plus a score table."""

from __future__ import annotations

import itertools
from typing import Callable, Mapping

import numpy as np

from ..seqcore import Vocabulary
from .base import NEG_INF, BatchMixin, log_softmax


def _contexts(content: list[int], max_depth: int):
    for depth in range(max_depth + 1):
        yield from itertools.product(content, repeat=depth)


class TabularJointModel(BatchMixin):
    """Conditional probability rows keyed by the last ``order`` tokens.

    ``order=None`` means the full prefix is the context (a probability tree).
    Prefixes of length ``max_len - 1`` always emit EOS. ``scores`` is either a
    mapping from sequence to value or a callable.
    """

    n_outputs = 1

    def __init__(self, vocab: Vocabulary, table: Mapping[tuple, np.ndarray], max_len: int,
                 order: int | None = None, scores: Mapping | Callable | None = None):
        self.vocab = vocab
        self.max_len = int(max_len)
        self.order = order
        self.table: dict[tuple, np.ndarray] = {}
        for ctx, row in table.items():
            row = np.asarray(row, dtype=np.float64)
            if row.shape != (vocab.size,):
                raise ValueError(f"row for context {ctx} has shape {row.shape}")
            if np.any(row < 0) or abs(row.sum() - 1.0) > 1e-12:
                raise ValueError(f"row for context {ctx} is not a distribution")
            if row[vocab.bos_index] != 0:
                raise ValueError("BOS must have probability zero")
            self.table[tuple(ctx)] = row
        with np.errstate(divide="ignore"):
            self._logtable = {ctx: np.log(row) for ctx, row in self.table.items()}
        self.scores = scores
        eos_row = np.full(vocab.size, NEG_INF)
        eos_row[vocab.eos_index] = 0.0
        self._eos_row = eos_row

    # -- constructors --------------------------------------------------------
    @classmethod
    def uniform(cls, vocab: Vocabulary, max_len: int, scores=None) -> "TabularJointModel":
        row = np.zeros(vocab.size)
        row[vocab.emittable_indices] = 1.0 / len(vocab.emittable_indices)
        return cls(vocab, {(): row}, max_len, order=0, scores=scores)

    @classmethod
    def random(cls, vocab: Vocabulary, max_len: int, rng: np.random.Generator,
               order: int | None = None, concentration: float = 1.0,
               zero_prob: float = 0.0, scores=None) -> "TabularJointModel":
        """Dirichlet rows for every reachable context.

        ``zero_prob`` knocks out individual content entries (never EOS) so
        models with structural zeros can be built.
        """
        depth = max_len - 2 if order is None else min(order, max_len - 2)
        emit = vocab.emittable_indices
        table = {}
        for ctx in _contexts(vocab.content_indices, max(depth, 0)):
            w = rng.dirichlet(np.full(len(emit), concentration))
            if zero_prob > 0:
                mask = rng.random(len(emit)) < zero_prob
                mask[emit.index(vocab.eos_index)] = False
                w = np.where(mask, 0.0, w)
                w /= w.sum()
            row = np.zeros(vocab.size)
            row[emit] = w
            row /= row.sum()
            table[ctx] = row
        return cls(vocab, table, max_len, order=order, scores=scores)

    @classmethod
    def deterministic(cls, vocab: Vocabulary, seq: tuple[int, ...], scores=None) -> "TabularJointModel":
        """Puts probability one on ``seq``."""
        table = {}
        for t in range(len(seq)):
            row = np.zeros(vocab.size)
            row[seq[t]] = 1.0
            table[tuple(seq[:t])] = row
        return cls(vocab, table, max_len=len(seq), order=None, scores=scores)

    # -- model interface -----------------------------------------------------
    def context(self, prefix: tuple[int, ...]) -> tuple[int, ...]:
        prefix = tuple(prefix)
        if self.order is None:
            return prefix
        if self.order == 0:
            return ()
        return prefix[-self.order:]

    def next_logprobs(self, prefix):
        if len(prefix) >= self.max_len - 1:
            return self._eos_row.copy()
        try:
            return self._logtable[self.context(prefix)].copy()
        except KeyError:
            raise KeyError(f"no table row for context {self.context(prefix)}") from None

    def next_probs(self, prefix) -> np.ndarray:
        return np.exp(self.next_logprobs(prefix))

    def predict(self, seq) -> np.ndarray:
        if self.scores is None:
            raise ValueError("tabular model has no score table")
        seq = tuple(seq)
        value = self.scores(seq) if callable(self.scores) else self.scores[seq]
        return np.atleast_1d(np.asarray(value, dtype=np.float64))

    def score(self, seq) -> float:
        return float(self.predict(seq)[0])


class LogitTabularModel(BatchMixin):
    """Tabular generator parameterized by unnormalized per-row logits.

    Differentiable in closed form: d log p(x) / d logits[ctx] is the sum over
    steps using ``ctx`` of ``onehot(x_t) - softmax(logits[ctx])``.
    """

    def __init__(self, vocab: Vocabulary, logits: Mapping[tuple, np.ndarray], max_len: int,
                 order: int | None = None):
        self.vocab = vocab
        self.max_len = int(max_len)
        self.order = order
        self.logits = {tuple(k): np.array(v, dtype=np.float64) for k, v in logits.items()}
        for v in self.logits.values():
            v[vocab.bos_index] = NEG_INF

    @classmethod
    def random(cls, vocab, max_len, rng, order=None, scale=1.0) -> "LogitTabularModel":
        depth = max_len - 2 if order is None else min(order, max_len - 2)
        logits = {}
        for ctx in _contexts(vocab.content_indices, max(depth, 0)):
            logits[ctx] = rng.normal(0.0, scale, vocab.size)
        return cls(vocab, logits, max_len, order)

    def copy(self) -> "LogitTabularModel":
        return LogitTabularModel(self.vocab, {k: v.copy() for k, v in self.logits.items()},
                                 self.max_len, self.order)

    def context(self, prefix):
        prefix = tuple(prefix)
        if self.order is None:
            return prefix
        return prefix[-self.order:] if self.order else ()

    def _forced_eos(self, t: int) -> bool:
        return t >= self.max_len - 1

    def next_logprobs(self, prefix):
        if self._forced_eos(len(prefix)):
            row = np.full(self.vocab.size, NEG_INF)
            row[self.vocab.eos_index] = 0.0
            return row
        return log_softmax(self.logits[self.context(prefix)])

    def logprob(self, seq) -> float:
        seq = tuple(seq)
        return float(sum(self.next_logprobs(seq[:t])[seq[t]] for t in range(len(seq))))

    def grad_logprob(self, seq) -> dict[tuple, np.ndarray]:
        seq = tuple(seq)
        grads: dict[tuple, np.ndarray] = {}
        for t in range(len(seq)):
            if self._forced_eos(t):
                continue
            ctx = self.context(seq[:t])
            p = np.exp(log_softmax(self.logits[ctx]))
            g = grads.setdefault(ctx, np.zeros(self.vocab.size))
            g -= p
            g[seq[t]] += 1.0
        return grads
