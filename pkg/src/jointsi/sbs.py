"""Stochastic Beam Search: K distinct sequences without replacement via top-down Gumbels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models.base import NEG_INF, log_softmax


@dataclass
class BeamItem:
    prefix: tuple[int, ...]
    logprob: float
    key: float
    done: bool = False


@dataclass
class SbsResult:
    sequences: list[tuple[int, ...]]
    logprobs: list[float]
    keys: list[float]
    truncated: bool = False
    n_evals: int = 0
    step_logprobs: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.sequences)


def shift_gumbels(parent_key: float, gumbels: np.ndarray) -> np.ndarray:
    """Condition child Gumbels so that their maximum equals ``parent_key``.

    Exact form: ``-log(exp(-T) - exp(-Z) + exp(-G))`` with ``Z = max(G)``.
    Evaluated as ``v = T - G + log1p(-exp(G - Z))`` and
    ``T - max(v, 0) - log1p(exp(-|v|))``, which never overflows.
    """
    z = np.max(gumbels)
    with np.errstate(divide="ignore"):
        v = parent_key - gumbels + np.log1p(-np.exp(gumbels - z))
    return parent_key - np.maximum(v, 0.0) - np.log1p(np.exp(-np.abs(v)))


def sbs_sample(view, k: int, rng: np.random.Generator, temperature: float = 1.0) -> SbsResult:
    """Draw ``k`` distinct completed sequences without replacement from ``view``.

    At most ``k`` live items are kept per depth, so the number of prefix
    evaluations is bounded by ``k * max_len``. Gumbels are drawn in frontier
    order, which is sorted by ``(-key, prefix)``; identical seeds therefore
    replay identically. When fewer than ``k`` sequences have nonzero
    probability the whole support is returned with ``truncated=True``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if temperature <= 0:
        raise ValueError("temperature must be > 0")
    eos = view.vocab.eos_index
    beam = [BeamItem((), 0.0, float(rng.gumbel()))]
    steps: dict[tuple[int, ...], list[float]] = {(): []}
    n_evals = 0
    while any(not b.done for b in beam):
        live = [b for b in beam if not b.done]
        rows = np.asarray(view.next_logprobs_batch([b.prefix for b in live]), dtype=np.float64)
        n_evals += len(live)
        if temperature != 1.0:
            rows = log_softmax(rows / temperature)
        cands = [b for b in beam if b.done]
        for item, row in zip(live, rows):
            toks = np.flatnonzero(row > NEG_INF)
            if toks.size == 0:
                continue
            phi = item.logprob + row[toks]
            keys = shift_gumbels(item.key, phi + rng.gumbel(size=toks.size))
            hist = steps[item.prefix]
            for tok, ph, g, lp in zip(toks.tolist(), phi.tolist(), keys.tolist(), row[toks].tolist()):
                pre = item.prefix + (tok,)
                steps[pre] = hist + [lp]
                cands.append(BeamItem(pre, ph, g, done=(tok == eos)))
        cands.sort(key=lambda b: (-b.key, b.prefix))
        beam = cands[:k]
    beam.sort(key=lambda b: (-b.key, b.prefix))
    return SbsResult(
        sequences=[b.prefix for b in beam],
        logprobs=[b.logprob for b in beam],
        keys=[b.key for b in beam],
        truncated=len(beam) < k,
        n_evals=n_evals,
        step_logprobs=[np.asarray(steps[b.prefix]) for b in beam],
    )
