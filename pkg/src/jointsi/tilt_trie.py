"""Augmented prefix trie that turns a base model into the tilted, mass-removed model.

Every node stands for a prefix ``x_{1:t}`` whose last token is ``node.token``.
It records

* ``base_cond_logprob``: log p(x_t | x_{1:t-1}) under the base view,
* ``removed_logmass`` R: log of the summed base tail probabilities
  p(x_{t:T} | x_{1:t-1}) of the sampled sequences below it,
* ``advantage_sum`` A: summed advantages of those sequences,
* ``log_unsampled``: log(p(x_t | x_{1:t-1}) - exp(R)).

``log_unsampled`` is rebuilt bottom-up as ``base_cond + logsumexp`` over the
children's unsampled mass (untouched children contribute their full base
probability). Only non-negative terms are summed, so a fully sampled subtree
lands on exactly -inf and no cancellation can resurrect it.

Tilted next-token logits at a trie prefix are ``log_unsampled + sigma * A``
for children in the trie and the base log-probability for everything else,
renormalized by a log-softmax. Prefixes outside the trie fall through to the
base view unchanged.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .models.base import NEG_INF, BatchMixin, log_softmax, sequence_logprob

# Fault-injection hook for the verification suite: flips the sign of sigma.
FAULT_FLIP_SIGMA = False


class DuplicateSampleError(ValueError):
    """A sequence was inserted twice; sampling was not without replacement."""


class TrieExhaustedError(RuntimeError):
    """Every continuation of the requested prefix has been sampled."""


def logdiffexp(a: float, b: float) -> float:
    """``log(exp(a) - exp(b))``; -inf when ``b >= a`` (clamped, never NaN)."""
    if b == NEG_INF:
        return a
    if b >= a:
        return NEG_INF
    return a + math.log(-math.expm1(b - a))


def _logsumexp(values: np.ndarray) -> float:
    m = np.max(values) if values.size else NEG_INF
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.sum(np.exp(values - m))))


class TrieNode:
    __slots__ = ("token", "depth", "children", "base_cond_logprob", "base_row",
                 "removed_logmass", "advantage_sum", "log_unsampled")

    def __init__(self, token, depth, base_cond_logprob, base_row=None):
        self.token = token
        self.depth = depth
        self.children: dict[int, TrieNode] = {}
        self.base_cond_logprob = float(base_cond_logprob)
        self.base_row = base_row
        self.removed_logmass = NEG_INF
        self.advantage_sum = 0.0
        self.log_unsampled = float(base_cond_logprob)

    @property
    def exhausted(self) -> bool:
        return self.log_unsampled == NEG_INF

    def refresh(self) -> None:
        """Recompute unsampled mass from the children (internal nodes only)."""
        row = self.base_row.copy()
        for tok, child in self.children.items():
            row[tok] = child.log_unsampled
        self.log_unsampled = self.base_cond_logprob + _logsumexp(row)


class TiltedModelView(BatchMixin):
    """Mass-removed, advantage-tilted view over ``base``.

    ``base`` should already carry temperature and the length cap; the trie
    works in that tempered space.
    """

    def __init__(self, base, sigma: float):
        if sigma < 0:
            raise ValueError("sigma must be >= 0")
        self.base = base
        self.vocab = base.vocab
        self.max_len = getattr(base, "max_len", None)
        self.sigma = float(sigma)
        self.root = TrieNode(None, 0, 0.0)
        self._row_cache: dict[tuple[int, ...], np.ndarray] = {}
        self.n_inserted = 0

    @property
    def effective_sigma(self) -> float:
        return -self.sigma if FAULT_FLIP_SIGMA else self.sigma

    # -- lookup --------------------------------------------------------------
    def find(self, prefix) -> TrieNode | None:
        node = self.root
        for tok in prefix:
            node = node.children.get(tok)
            if node is None:
                return None
        return node

    def _tilted_row(self, node: TrieNode) -> np.ndarray:
        logits = node.base_row.copy()
        s = self.effective_sigma
        for tok, child in node.children.items():
            logits[tok] = NEG_INF if child.exhausted else child.log_unsampled + s * child.advantage_sum
        if np.all(logits == NEG_INF):
            raise TrieExhaustedError("all continuations of this prefix were sampled")
        return log_softmax(logits)

    def next_logprobs(self, prefix):
        return self.next_logprobs_batch([tuple(prefix)])[0]

    def next_logprobs_batch(self, prefixes):
        prefixes = [tuple(p) for p in prefixes]
        out = np.empty((len(prefixes), self.vocab.size))
        fall_through = []
        for i, p in enumerate(prefixes):
            node = self.find(p)
            if node is None or not node.children:
                fall_through.append(i)
            else:
                out[i] = self._tilted_row(node)
        if fall_through:
            rows = np.asarray(self.base.next_logprobs_batch([prefixes[i] for i in fall_through]))
            for i, row in zip(fall_through, rows):
                out[i] = row
                self._row_cache[prefixes[i]] = row.copy()
        return out

    def _base_row(self, prefix) -> np.ndarray:
        row = self._row_cache.get(prefix)
        if row is None:
            row = np.asarray(self.base.next_logprobs_batch([prefix])[0], dtype=np.float64)
        return row.copy()

    # -- update --------------------------------------------------------------
    def insert_round(self, samples: Iterable) -> None:
        """Insert ``(sequence, advantage)`` pairs from one sampling round.

        Three-element items ``(sequence, step_logprobs, advantage)`` are also
        accepted; the step log-probabilities are not needed because removed
        mass is measured with the base conditionals frozen in the nodes.
        """
        items = []
        for s in samples:
            seq, adv = (s[0], s[-1])
            items.append((tuple(seq), float(adv)))
        seen = set()
        for seq, _ in items:
            if seq in seen:
                raise DuplicateSampleError(f"sequence {seq} appears twice in one round")
            seen.add(seq)
        if self.root.base_row is None:
            self.root.base_row = self._base_row(())
        for seq, adv in items:
            self._insert(seq, adv)
        self._row_cache.clear()

    def _insert(self, seq: tuple[int, ...], adv: float) -> None:
        eos = self.vocab.eos_index
        if not seq or seq[-1] != eos:
            raise ValueError("sampled sequence must end with EOS")
        path = []
        node = self.root
        for t, tok in enumerate(seq):
            child = node.children.get(tok)
            if child is None:
                cond = node.base_row[tok]
                if cond == NEG_INF:
                    raise ValueError(f"token {tok} has zero probability after prefix {seq[:t]}")
                row = None if tok == eos else self._base_row(seq[:t + 1])
                child = TrieNode(tok, t + 1, cond, row)
                node.children[tok] = child
            elif child.exhausted:
                raise DuplicateSampleError(f"sequence {seq} was already sampled")
            path.append(child)
            node = child
        tail = 0.0
        for n in reversed(path):
            tail += n.base_cond_logprob
            n.removed_logmass = float(np.logaddexp(n.removed_logmass, tail))
            n.advantage_sum += adv
        path[-1].log_unsampled = NEG_INF
        for n in reversed(path[:-1]):
            n.refresh()
        self.root.log_unsampled = _logsumexp(
            np.array([c.log_unsampled for c in self.root.children.values()]
                     + [v for t, v in enumerate(self.root.base_row) if t not in self.root.children]))
        self.n_inserted += 1

    @property
    def exhausted(self) -> bool:
        return self.root.base_row is not None and self.root.log_unsampled == NEG_INF

    # -- inspection ----------------------------------------------------------
    def nodes(self):
        """Depth-first (node, prefix) pairs, children in token order."""
        stack = [(c, (t,)) for t, c in sorted(self.root.children.items(), reverse=True)]
        while stack:
            node, prefix = stack.pop()
            yield node, prefix
            stack.extend((c, prefix + (t,)) for t, c in sorted(node.children.items(), reverse=True))

    def dump(self) -> str:
        """One line per node: depth, token, base_cond_logprob, R, A, exhausted."""
        lines = []
        for node, _ in self.nodes():
            lines.append("\t".join([
                str(node.depth), self.vocab.tokens[node.token],
                repr(node.base_cond_logprob), repr(node.removed_logmass),
                repr(node.advantage_sum), str(int(node.exhausted))]))
        return "\n".join(lines) + ("\n" if lines else "")


def sequence_prob_under_view(view, seq) -> float:
    """Product of the view's conditionals along ``seq``."""
    try:
        return math.exp(sequence_logprob(view, seq))
    except TrieExhaustedError:
        return 0.0
