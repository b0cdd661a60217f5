"""Rounds of without-replacement sampling, global advantages and trie tilting.

Also holds exact per-token advantage references for tiny tabular models.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence as Seq

import numpy as np

from .models.base import NEG_INF, TemperedView, enumerate_support, log_softmax
from .objectives import Oracle, ZScoreStats, aggregate_score
from .sbs import sbs_sample
from .seqcore import ConfigError
from .tilt_trie import TiltedModelView

MU_KINDS = ("empirical_mean",)

BEAM_WIDTH_GRID = (16, 32, 64, 128)
ROUNDS_GRID = (4, 8, 10, 12, 14)
SIGMA_GRID = (0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75)
DEFAULT_TEMPERATURE = 0.9

# Best (K, N_rounds, sigma) per docking target reported for the two regimes.
OFFLINE_BEST = {
    "parp1": (128, 10, 0.25), "fa7": (128, 10, 0.5), "5ht1b": (16, 8, 1.0),
    "braf": (128, 8, 1.0), "jak2": (128, 8, 0.5),
}
ONLINE_BEST = {
    "parp1": (16, 10, 1.5), "fa7": (16, 14, 1.5), "5ht1b": (32, 10, 0.75),
    "braf": (16, 12, 1.75), "jak2": (16, 10, 1.5),
}


@dataclass
class JsiConfig:
    K: int = 16
    n_rounds: int = 8
    sigma: float = 1.0
    temperature: float = DEFAULT_TEMPERATURE
    mu_kind: str = "empirical_mean"

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ConfigError("K must be a positive integer")
        if int(self.n_rounds) != self.n_rounds or self.n_rounds < 1:
            raise ConfigError("n_rounds must be a positive integer")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not self.temperature > 0:
            raise ConfigError("temperature must be > 0")
        if self.mu_kind not in MU_KINDS:
            raise ConfigError(f"unknown mu_kind {self.mu_kind!r}; expected one of {MU_KINDS}")
        self.K, self.n_rounds = int(self.K), int(self.n_rounds)
        self.sigma, self.temperature = float(self.sigma), float(self.temperature)

    @classmethod
    def preset(cls, target: str, regime: str = "offline") -> "JsiConfig":
        table = OFFLINE_BEST if regime == "offline" else ONLINE_BEST
        K, n, s = table[target]
        return cls(K=K, n_rounds=n, sigma=s)


class ScoreFn:
    """Sequence -> scalar score. ``flavor`` is ``"predictor"`` or ``"oracle"``.

    Oracle-flavored functions keep every evaluated ``(sequence, components)``
    pair in ``evaluated`` in call order.
    """

    def __init__(self, fn: Callable, flavor: str = "predictor", batch_fn: Callable | None = None):
        if flavor not in ("predictor", "oracle"):
            raise ValueError(f"unknown score flavor {flavor!r}")
        self.fn = fn
        self.flavor = flavor
        self.batch_fn = batch_fn
        self.n_calls = 0
        self.evaluated: list[tuple[tuple[int, ...], np.ndarray]] = []

    def __call__(self, seq) -> float:
        self.n_calls += 1
        return float(self.fn(tuple(seq)))

    def batch(self, seqs) -> list[float]:
        if self.batch_fn is not None and seqs:
            self.n_calls += len(seqs)
            return [float(v) for v in self.batch_fn([tuple(s) for s in seqs])]
        return [self(s) for s in seqs]


def predictor_score_fn(model, stats: ZScoreStats, signs) -> ScoreFn:
    """Aggregated z-score of the model's predicted components.

    The model is assumed to predict z-scored targets; predictions are mapped
    back to raw units before aggregation.
    """
    def batch(seqs):
        raw = stats.denormalize(model.predict_batch(seqs))
        return np.atleast_1d(aggregate_score(raw, stats, signs))

    return ScoreFn(lambda s: batch([s])[0], "predictor", batch)


def oracle_score_fn(oracle: Oracle, stats: ZScoreStats, signs) -> ScoreFn:
    sf: ScoreFn

    def fn(seq):
        comps = oracle.evaluate(seq)
        sf.evaluated.append((seq, comps))
        return aggregate_score(comps, stats, signs)

    sf = ScoreFn(fn, "oracle")
    return sf


def mu_estimate(scores: Seq[float], kind: str = "empirical_mean") -> float:
    if len(scores) == 0:
        raise ValueError("mu_estimate needs at least one score")
    if kind != "empirical_mean":
        raise ValueError(f"unknown mu_kind {kind!r}")
    return float(np.mean(scores))


def global_advantage(score: float, mu: float) -> float:
    return score - mu


@dataclass
class RoundTrace:
    sequences: list[tuple[int, ...]]
    scores: list[float]
    mu: float
    advantages: list[float]


@dataclass
class JsiTrace:
    rounds: list[RoundTrace] = field(default_factory=list)
    sampled: list[tuple[int, ...]] = field(default_factory=list)
    truncated: bool = False
    sampling_seconds: float = 0.0

    @property
    def scores(self) -> dict[tuple[int, ...], float]:
        return {s: v for r in self.rounds for s, v in zip(r.sequences, r.scores)}

    def round_means(self) -> list[float]:
        return [float(np.mean(r.scores)) for r in self.rounds]

    def rows(self, vocab):
        for n, r in enumerate(self.rounds, start=1):
            for s, v, a in zip(r.sequences, r.scores, r.advantages):
                yield n, vocab.to_text(s), v, a, r.mu

    def to_tsv(self, vocab) -> str:
        """One line per sample: round, sequence, score, advantage, mu."""
        lines = ["round\tsequence\tscore\tadvantage\tmu"]
        lines += [f"{n}\t{s}\t{v!r}\t{a!r}\t{m!r}" for n, s, v, a, m in self.rows(vocab)]
        return "\n".join(lines) + "\n"


def as_view(model, temperature: float, max_len: int | None = None):
    if isinstance(model, (TemperedView, TiltedModelView)):
        return model
    return TemperedView(model, temperature, max_len)


def jsi_sample(model, score_fn: ScoreFn, cfg: JsiConfig, rng: np.random.Generator,
               max_samples: int | None = None, exclude=(), clock=time.perf_counter):
    """Run ``cfg.n_rounds`` rounds of tilted sampling; return the best sample and the trace.

    Each round draws ``K`` sequences without replacement from the current
    tilted view, scores them, centers the scores on ``mu`` and folds the
    advantages into the trie. ``max_samples`` caps the total number of scored
    sequences (the last round is cut short); support exhaustion stops early
    and sets ``trace.truncated``. Sequences in ``exclude`` have their mass
    removed up front with zero advantage, so they are never drawn.
    """
    view = TiltedModelView(as_view(model, cfg.temperature), cfg.sigma)
    exclude = [s for s in dict.fromkeys(tuple(s) for s in exclude)]
    if exclude:
        view.insert_round([(s, 0.0) for s in exclude])
    trace = JsiTrace()
    for _ in range(cfg.n_rounds):
        if max_samples is not None and len(trace.sampled) >= max_samples:
            break
        if view.exhausted:
            trace.truncated = True
            break
        t0 = clock()
        res = sbs_sample(view, cfg.K, rng)
        trace.sampling_seconds += clock() - t0
        seqs = res.sequences
        if res.truncated:
            trace.truncated = True
        if max_samples is not None:
            seqs = seqs[:max_samples - len(trace.sampled)]
        if not seqs:
            break
        scores = score_fn.batch(seqs)
        mu = mu_estimate(scores, cfg.mu_kind)
        advs = [global_advantage(s, mu) for s in scores]
        t0 = clock()
        view.insert_round(list(zip(seqs, advs)))
        trace.sampling_seconds += clock() - t0
        trace.sampled.extend(seqs)
        trace.rounds.append(RoundTrace(list(seqs), list(scores), mu, advs))
    if not trace.sampled:
        return None, trace
    scores = trace.scores
    best = max(trace.sampled, key=lambda s: scores[s])
    return best, trace


# -- exact references on enumerable tabular models ------------------------------

def _expected_score(model, prefix, max_len, limit) -> float:
    total, mass = 0.0, 0.0
    for seq, lp in enumerate_support(model, max_len, limit=limit, prefix=prefix):
        p = np.exp(lp)
        total += p * model.score(seq)
        mass += p
    return total / mass


def individual_advantage_exact(model, prefix, token: int, limit: int = 100_000) -> float:
    """``E[score | prefix, token] - E[score | prefix]`` by full enumeration."""
    prefix = tuple(prefix)
    row = model.next_logprobs(prefix)
    if row[token] == NEG_INF:
        raise ValueError("token has zero probability after this prefix")
    try:
        base = _expected_score(model, prefix, model.max_len, limit)
        if token == model.vocab.eos_index:
            given = model.score(prefix + (token,))
        else:
            given = _expected_score(model, prefix + (token,), model.max_len, limit)
    except OverflowError as exc:
        raise OverflowError(f"enumeration bound exceeded: {exc}") from None
    return given - base


def perturbed_logits_individual(model, prefix, sigma: float, limit: int = 100_000) -> np.ndarray:
    """Next-token log-probabilities tilted by ``sigma`` times the exact token advantage."""
    prefix = tuple(prefix)
    row = model.next_logprobs(prefix)
    out = np.full_like(row, NEG_INF)
    for tok in np.flatnonzero(row > NEG_INF):
        out[tok] = row[tok] + sigma * individual_advantage_exact(model, prefix, int(tok), limit)
    return log_softmax(out)
