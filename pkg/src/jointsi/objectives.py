"""Ground-truth oracles, budget accounting, score aggregation and the exact Gibbs tilt."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence as Seq

import numpy as np

from .models.base import enumerate_support
from .models.tabular import TabularJointModel
from .seqcore import ConfigError, LabeledExample, Vocabulary, make_rng

# Component order produced by every landscape oracle.
COMPONENTS = ("primary", "aux1", "aux2")
# Aligns components to higher-is-better: primary is stored lower-is-better.
DEFAULT_SIGNS = np.array([-1.0, 1.0, -1.0])
AUX1_MIN = 0.5
AUX2_MAX = 5.0


class BudgetExhausted(RuntimeError):
    pass


class BudgetLedger:
    """Hard counter of oracle evaluations."""

    def __init__(self, budget: int):
        if budget < 0:
            raise ConfigError("budget must be >= 0")
        self.budget = int(budget)
        self.used = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return self.budget - self.used

    def charge(self, n: int = 1) -> None:
        with self._lock:
            if self.used + n > self.budget:
                raise BudgetExhausted(
                    f"oracle budget of {self.budget} exhausted ({self.used} used, {n} requested)")
            self.used += n


@dataclass
class SyntheticLandscape:
    """Desk-scale stand-in for a docking score with two feasibility statistics.

    * primary: ``-(sum_p w_p * count_p(x) - length_penalty * max(0, len - free_length))``
      (negated when ``primary_lower_is_better``; overlapping matches count).
    * aux1 in [0, 1]: ``exp(-((len - aux1_center) / aux1_width)^2) * (distinct / len)^aux1_distinct_power``.
    * aux2 in [1, 10]: ``1 + 9 * min(1, repeat_weight * repeat_frac + hard_weight * hard_frac)``.
    """

    vocab: Vocabulary
    patterns: list[tuple[tuple[int, ...], float]]
    length_penalty: float = 0.75
    free_length: int = 12
    aux1_center: float = 10.0
    aux1_width: float = 8.0
    aux1_distinct_power: float = 1.0
    aux2_repeat_weight: float = 1.5
    aux2_hard_weight: float = 1.0
    hard_tokens: tuple[int, ...] = ()
    primary_lower_is_better: bool = True

    n_components = 3

    def components(self, seq: Seq[int]) -> np.ndarray:
        """Uncounted evaluation; use an ``Oracle`` for budgeted calls."""
        eos = self.vocab.eos_index
        x = tuple(seq)
        if x and x[-1] == eos:
            x = x[:-1]
        n = len(x)
        reward = 0.0
        for pat, w in self.patterns:
            k = len(pat)
            reward += w * sum(1 for i in range(n - k + 1) if x[i:i + k] == pat)
        reward -= self.length_penalty * max(0, n - self.free_length)
        primary = -reward if self.primary_lower_is_better else reward
        if n == 0:
            return np.array([primary, 0.0, 10.0])
        distinct = len(set(x)) / n
        aux1 = math.exp(-((n - self.aux1_center) / self.aux1_width) ** 2) * distinct ** self.aux1_distinct_power
        repeats = sum(1 for i in range(1, n) if x[i] == x[i - 1]) / n
        hard = sum(1 for t in x if t in self.hard_tokens) / n
        aux2 = 1.0 + 9.0 * min(1.0, self.aux2_repeat_weight * repeats + self.aux2_hard_weight * hard)
        return np.array([primary, aux1, aux2])

    @property
    def signs(self) -> np.ndarray:
        s = DEFAULT_SIGNS.copy()
        if not self.primary_lower_is_better:
            s[0] = 1.0
        return s

    @classmethod
    def default(cls, seed: int = 101, max_len: int = 24) -> "SyntheticLandscape":
        """Default task: 12 content tokens, T_max 24.

        Six motifs of length 3-5 are cut from sequences of ``default_prior``
        so each one occurs in a few percent of prior samples, plus one
        affinity weight per token (length-1 patterns) that grades the primary
        objective between motif hits.
        """
        from .models.base import TemperedView, sample_sequences

        vocab = Vocabulary.letters(12)
        prior = default_prior(vocab, max_len)
        rng = make_rng(seed)
        pool = [s[:-1] for s in sample_sequences(TemperedView(prior, 1.0, max_len), 200, rng) if len(s) > 8]
        patterns = []
        for length in (3, 3, 4, 4, 5, 5):
            src = pool[rng.integers(len(pool))]
            start = rng.integers(len(src) - length + 1)
            patterns.append((tuple(int(t) for t in src[start:start + length]),
                             round(float(rng.uniform(1.0, 3.0)), 3)))
        affinity = rng.uniform(-0.6, 0.6, len(vocab.content_indices)).round(3)
        patterns += [((c,), float(a)) for c, a in zip(vocab.content_indices, affinity)]
        return cls(vocab, patterns, hard_tokens=(vocab.index("K"), vocab.index("L")))

    # -- file format ---------------------------------------------------------
    _HEADER_KEYS = {
        "length_penalty": float, "free_length": int, "aux1_center": float, "aux1_width": float,
        "aux1_distinct_power": float, "aux2_repeat_weight": float, "aux2_hard_weight": float,
    }

    def to_text(self) -> str:
        lines = ["#landscape\t1", "@vocab\t" + " ".join(self.vocab.tokens[i] for i in self.vocab.content_indices)]
        for key in self._HEADER_KEYS:
            lines.append(f"@{key}\t{getattr(self, key)!r}")
        lines.append("@hard_tokens\t" + " ".join(self.vocab.tokens[t] for t in self.hard_tokens))
        lines.append(f"@primary_lower_is_better\t{int(self.primary_lower_is_better)}")
        for pat, w in self.patterns:
            lines.append(" ".join(self.vocab.tokens[t] for t in pat) + f"\t{w!r}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str, vocab: Vocabulary | None = None) -> "SyntheticLandscape":
        opts: dict = {}
        raw_patterns = []
        hard = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, value = line.partition("\t")
            if not sep:
                raise ConfigError(f"landscape line {lineno}: expected a TAB separator")
            if key.startswith("@"):
                key = key[1:]
                if key == "vocab":
                    vocab = vocab or Vocabulary.from_content(value.split())
                elif key == "hard_tokens":
                    hard = value.split()
                elif key == "primary_lower_is_better":
                    opts[key] = bool(int(value))
                elif key in cls._HEADER_KEYS:
                    opts[key] = cls._HEADER_KEYS[key](value)
                else:
                    raise ConfigError(f"landscape line {lineno}: unknown header key {key!r}")
            else:
                raw_patterns.append((key.split(), float(value), lineno))
        if vocab is None:
            raise ConfigError("landscape file needs an @vocab header")
        patterns = []
        for toks, w, lineno in raw_patterns:
            try:
                patterns.append((tuple(vocab.index(t) for t in toks), w))
            except ValueError as exc:
                raise ConfigError(f"landscape line {lineno}: {exc}") from None
        return cls(vocab, patterns, hard_tokens=tuple(vocab.index(t) for t in hard), **opts)

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticLandscape":
        return cls.from_text(Path(path).read_text(encoding="utf-8"))


class Oracle:
    """Budgeted evaluation of a landscape: every call is charged to the ledger first."""

    def __init__(self, landscape: SyntheticLandscape, ledger: BudgetLedger):
        self.landscape = landscape
        self.ledger = ledger
        self.n_components = landscape.n_components

    def evaluate(self, seq) -> np.ndarray:
        self.ledger.charge(1)
        return self.landscape.components(seq)


@dataclass
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if np.any(~(self.std > 0)):
            raise ConfigError("every component needs a positive standard deviation")

    @classmethod
    def from_scores(cls, scores: np.ndarray) -> "ZScoreStats":
        scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
        return cls(scores.mean(axis=0), scores.std(axis=0))

    @classmethod
    def from_examples(cls, data: Seq[LabeledExample]) -> "ZScoreStats":
        return cls.from_scores(np.stack([ex.scores for ex in data]))

    def normalize(self, scores):
        return (np.asarray(scores, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


def aggregate_score(components, stats: ZScoreStats, signs=None):
    """Mean over components of ``sign_i * (c_i - mean_i) / std_i``.

    Works on a single M-vector or on an (n, M) matrix.
    """
    c = np.asarray(components, dtype=np.float64)
    signs = np.ones(c.shape[-1]) if signs is None else np.asarray(signs, dtype=np.float64)
    z = signs * (c - stats.mean) / stats.std
    out = z.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def hit_criterion(components, threshold_primary: float, aux_bounds=(AUX1_MIN, AUX2_MAX),
                  lower_is_better: bool = True) -> bool:
    """Primary strictly better than the threshold and both feasibility bounds strict."""
    primary, aux1, aux2 = (float(v) for v in components[:3])
    better = primary < threshold_primary if lower_is_better else primary > threshold_primary
    return bool(better and aux1 > aux_bounds[0] and aux2 < aux_bounds[1])


def gibbs_tilt_exact(model, f: Callable[[tuple], float], beta: float,
                     max_len: int | None = None, limit: int = 200_000) -> dict[tuple, float]:
    """Exact ``p(x) * exp(f(x) / beta) / Z`` over the full support of ``model``.

    ``f`` is a plain callable and is never charged to a ledger.
    """
    if beta <= 0:
        raise ValueError("beta must be > 0")
    max_len = max_len or model.max_len
    seqs, logp = [], []
    for seq, lp in enumerate_support(model, max_len, limit=limit):
        seqs.append(seq)
        logp.append(lp)
    fx = np.array([f(s) for s in seqs], dtype=np.float64)
    # centering f first keeps a constant shift of f from touching log p at all
    logw = np.asarray(logp) + (fx - fx.max()) / beta
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    return dict(zip(seqs, w.tolist()))


def default_prior(vocab: Vocabulary, max_len: int, seed: int = 11, mean_length: float = 10.0,
                  concentration: float = 0.5) -> TabularJointModel:
    """Order-1 Markov generator standing in for the pretraining distribution.

    EOS gets probability ``1 / mean_length`` at every step after the first.
    """
    rng = make_rng(seed)
    content = vocab.content_indices
    p_eos = 1.0 / mean_length
    table = {}
    for ctx in [()] + [(c,) for c in content]:
        w = rng.dirichlet(np.full(len(content), concentration))
        row = np.zeros(vocab.size)
        if ctx == ():
            row[content] = w
        else:
            row[content] = (1.0 - p_eos) * w
            row[vocab.eos_index] = p_eos
        row /= row.sum()
        table[ctx] = row
    return TabularJointModel(vocab, table, max_len, order=1)
