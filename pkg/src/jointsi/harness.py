"""Offline and online experiment runners, metrics and run records."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence as Seq

import numpy as np

from .baselines import BEST_OF_N_DEFAULT, ReinventConfig, best_of_n, reinvent_finetune
from .jsi import JsiConfig, ScoreFn, jsi_sample, oracle_score_fn, predictor_score_fn
from .models.base import TemperedView, sample_sequences
from .models.neural import NeuralJointModel, TrainConfig, train_joint
from .objectives import (BudgetExhausted, BudgetLedger, Oracle, SyntheticLandscape, ZScoreStats,
                         aggregate_score, default_prior, hit_criterion)
from .seqcore import (ConfigError, LabeledExample, derive_rng, kmer_set, read_dataset, split_dataset)

log = logging.getLogger(__name__)

OFFLINE_METHODS = ("jsi", "no-joint", "best-of-n")
ONLINE_METHODS = ("jsi", "best-of-n", "reinvent")
ABLATION_VARIANTS = {"full": "jsi", "no-joint": "no-joint", "no-self-improve": "best-of-n"}

# rng streams of one run
_DATA, _PRETRAIN, _SPLIT, _FINETUNE, _SAMPLE = range(5)


@dataclass
class WorldConfig:
    """Landscape, reference data and the generatively pretrained model shared by all methods."""

    max_len: int = 24
    landscape: str | None = None
    landscape_seed: int = 101
    dataset_size: int = 3000
    active_fraction: float = 0.1
    context: int = 8
    embed_dim: int = 16
    hidden: int = 32
    pretrain_size: int = 3000
    pretrain_epochs: int = 8
    pretrain_learning_rate: float = 0.5

    def __post_init__(self):
        if self.max_len < 2:
            raise ConfigError("max_len must be >= 2")
        if not 0.0 < self.active_fraction <= 1.0:
            raise ConfigError("active_fraction must be in (0, 1]")
        if self.dataset_size < 2 or self.pretrain_size < 1:
            raise ConfigError("dataset_size must be >= 2 and pretrain_size >= 1")


def _finetune_default() -> TrainConfig:
    return TrainConfig(lam=1.0, learning_rate=0.5, batch_size=32, epochs=10)


def _retrain_default() -> TrainConfig:
    return TrainConfig(lam=0.0, learning_rate=0.5, batch_size=32, epochs=1000)


@dataclass
class OfflineRunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    dataset: str | None = None
    checkpoint: str | None = None
    train: TrainConfig = field(default_factory=_finetune_default)
    jsi: JsiConfig = field(default_factory=lambda: JsiConfig(K=128, n_rounds=10, sigma=0.5))
    n_eval: int = 64
    budget: int = 3000
    train_fraction: float = 0.5
    method: str = "jsi"
    best_of_n: int = BEST_OF_N_DEFAULT
    seed: int = 0

    def __post_init__(self):
        if self.method not in OFFLINE_METHODS:
            raise ConfigError(f"unknown offline method {self.method!r}; expected one of {OFFLINE_METHODS}")
        if self.n_eval < 1:
            raise ConfigError("n_eval must be >= 1")
        if self.n_eval > self.budget:
            raise ConfigError(f"evaluation count {self.n_eval} exceeds the oracle budget {self.budget}")


@dataclass
class OnlineRunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    jsi: JsiConfig = field(default_factory=lambda: JsiConfig(K=16, n_rounds=10, sigma=1.5))
    budget: int = 3000
    keep_fraction: float = 0.25
    retrain_steps: int = 20
    retrain: TrainConfig = field(default_factory=_retrain_default)
    method: str = "jsi"
    best_of_n: int = BEST_OF_N_DEFAULT
    reinvent: ReinventConfig = field(default_factory=ReinventConfig)
    seed: int = 0

    def __post_init__(self):
        if self.method not in ONLINE_METHODS:
            raise ConfigError(f"unknown online method {self.method!r}; expected one of {ONLINE_METHODS}")
        if self.retrain.lam != 0.0:
            raise ConfigError("online retraining is purely generative: retrain.lam must be 0")
        if not 0.0 < self.keep_fraction <= 1.0:
            raise ConfigError("keep_fraction must be in (0, 1]")
        if self.retrain_steps < 0 or self.budget < 1:
            raise ConfigError("retrain_steps must be >= 0 and budget >= 1")


def config_snapshot(cfg) -> dict:
    return json.loads(json.dumps(dataclasses.asdict(cfg), sort_keys=True))


def config_hash(cfg) -> str:
    blob = json.dumps(config_snapshot(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


# -- metrics -----------------------------------------------------------------

def hit_ratio(hits: Seq[bool]) -> float:
    """Percentage of true flags."""
    if len(hits) == 0:
        raise ValueError("hit ratio of an empty sample list is undefined")
    return 100.0 * sum(bool(h) for h in hits) / len(hits)


def intdiv1(samples: Seq[Seq[int]], k: int = 3, eos_index: int | None = None) -> float:
    """One minus the mean pairwise Jaccard similarity of k-mer sets.

    Two empty k-mer sets count as identical (similarity 1).
    """
    if len(samples) < 2:
        raise ValueError("internal diversity needs at least two samples")
    sets = [kmer_set(s, k, eos_index) for s in samples]
    index: dict = {}
    for s in sets:
        for g in s:
            index.setdefault(g, len(index))
    M = np.zeros((len(sets), max(1, len(index))))
    for i, s in enumerate(sets):
        M[i, [index[g] for g in s]] = 1.0
    inter = M @ M.T
    size = M.sum(axis=1)
    union = size[:, None] + size[None, :] - inter
    sim = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    iu = np.triu_indices(len(sets), 1)
    return float(1.0 - sim[iu].mean())


def time_per_sample(record: "RunRecord") -> float:
    n = record.timing.get("n_samples", 0)
    if n <= 0:
        raise ValueError("no samples were timed")
    return record.timing["sampling_seconds"] / n


# -- records -----------------------------------------------------------------

@dataclass
class RunRecord:
    kind: str
    method: str
    seed: int
    config: dict
    rows: list[dict]
    metrics: dict
    ledger: dict
    timing: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        blob = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    @property
    def stem(self) -> str:
        return f"{self.kind}-{self.method}-seed{self.seed}-{self.config_hash}"

    def summary(self) -> dict:
        return {"kind": self.kind, "method": self.method, "seed": self.seed,
                "config_hash": self.config_hash, "config": self.config,
                "metrics": self.metrics, "ledger": self.ledger}

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"

    def rows_jsonl(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """Write ``<stem>.json``, ``<stem>.jsonl`` and the ``<stem>.timing.json`` sidecar.

        Wall-clock numbers live only in the sidecar so the first two files are
        reproducible byte for byte.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"record": out / f"{self.stem}.json", "rows": out / f"{self.stem}.jsonl",
                 "timing": out / f"{self.stem}.timing.json"}
        paths["record"].write_text(self.to_json(), encoding="utf-8")
        paths["rows"].write_text(self.rows_jsonl(), encoding="utf-8")
        paths["timing"].write_text(json.dumps(self.timing, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return paths

    @classmethod
    def read(cls, path: str | Path) -> "RunRecord":
        path = Path(path)
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows_path = path.with_suffix(".jsonl")
        rows = [json.loads(l) for l in rows_path.read_text(encoding="utf-8").splitlines() if l.strip()]
        timing_path = path.with_name(path.stem + ".timing.json")
        timing = json.loads(timing_path.read_text(encoding="utf-8")) if timing_path.exists() else {}
        return cls(doc["kind"], doc["method"], doc["seed"], doc["config"], rows,
                   doc["metrics"], doc["ledger"], timing)


# -- world -------------------------------------------------------------------

@dataclass
class World:
    landscape: SyntheticLandscape
    prior: object
    dataset: list[LabeledExample]
    pretrained: NeuralJointModel


def load_landscape(cfg: WorldConfig) -> SyntheticLandscape:
    if cfg.landscape:
        return SyntheticLandscape.load(cfg.landscape)
    return SyntheticLandscape.default(cfg.landscape_seed, cfg.max_len)


def synthetic_dataset(landscape: SyntheticLandscape, prior, n: int, rng, max_len: int) -> list[LabeledExample]:
    """Prior samples labeled with precomputed landscape components (no budget involved)."""
    seqs = sample_sequences(TemperedView(prior, 1.0, max_len), n, rng)
    return [LabeledExample(s, landscape.components(s)) for s in seqs]


def pretrain_model(cfg: WorldConfig, landscape: SyntheticLandscape, prior, seed: int) -> NeuralJointModel:
    """Generative-only pretraining on unlabeled prior samples."""
    rng = derive_rng(seed, _PRETRAIN)
    corpus = sample_sequences(TemperedView(prior, 1.0, cfg.max_len), cfg.pretrain_size, rng)
    M = landscape.n_components
    model = NeuralJointModel(landscape.vocab, cfg.max_len, cfg.context, cfg.embed_dim, cfg.hidden,
                             n_outputs=M, rng=rng)
    data = [LabeledExample(s, np.zeros(M)) for s in corpus]
    train_joint(model, data, TrainConfig(lam=0.0, learning_rate=cfg.pretrain_learning_rate,
                                         epochs=cfg.pretrain_epochs), rng)
    return model


def build_world(cfg: WorldConfig, seed: int, dataset: str | None = None) -> World:
    landscape = load_landscape(cfg)
    prior = default_prior(landscape.vocab, cfg.max_len)
    if dataset:
        path = Path(dataset)
        if not path.exists():
            raise FileNotFoundError(f"dataset file not found: {dataset}")
        data = read_dataset(path, landscape.vocab, cfg.max_len)
    else:
        data = synthetic_dataset(landscape, prior, cfg.dataset_size, derive_rng(seed, _DATA), cfg.max_len)
    return World(landscape, prior, data, pretrain_model(cfg, landscape, prior, seed))


def reference_threshold(data: Seq[LabeledExample], active_fraction: float, lower_is_better: bool = True) -> float:
    """Median primary score over the best ``active_fraction`` of a reference set."""
    primary = np.array([ex.scores[0] for ex in data])
    order = np.sort(primary) if lower_is_better else np.sort(primary)[::-1]
    n = max(1, int(round(active_fraction * len(order))))
    return float(np.median(order[:n]))


def zscored(data: Seq[LabeledExample], stats: ZScoreStats) -> list[LabeledExample]:
    return [LabeledExample(ex.sequence, stats.normalize(ex.scores)) for ex in data]


def _row(i, seq, comps, stats, landscape, threshold) -> dict:
    return {"index": i, "sequence": landscape.vocab.to_text(seq),
            "components": [float(c) for c in comps],
            "score": float(aggregate_score(comps, stats, landscape.signs)),
            "hit": hit_criterion(comps, threshold, lower_is_better=landscape.primary_lower_is_better)}


def _metrics(rows, seqs, eos) -> dict:
    out = {"n_samples": len(rows), "hit_ratio": hit_ratio([r["hit"] for r in rows]) if rows else 0.0,
           "best_score": max((r["score"] for r in rows), default=None)}
    out["intdiv1"] = intdiv1(seqs, 3, eos) if len(seqs) >= 2 else None
    return out


# -- offline -----------------------------------------------------------------

@dataclass
class OfflineSplit:
    train: list[LabeledExample]
    reference: list[LabeledExample]
    stats: ZScoreStats
    threshold: float
    ztrain: list[LabeledExample]


def offline_split(cfg: OfflineRunConfig, world: World) -> OfflineSplit:
    """Train split with z-scored labels; the held-out split is the reference set for hits."""
    train, reference = split_dataset(world.dataset, cfg.train_fraction, derive_rng(cfg.seed, _SPLIT))
    stats = ZScoreStats.from_examples(train)
    threshold = reference_threshold(reference or train, cfg.world.active_fraction,
                                    world.landscape.primary_lower_is_better)
    return OfflineSplit(train, reference, stats, threshold, zscored(train, stats))


def finetune_offline(cfg: OfflineRunConfig, world: World):
    """The joint fine-tuning step of ``run_offline`` on its own; returns ``(model, trace)``."""
    split = offline_split(cfg, world)
    model = world.pretrained.copy()
    _, trace = train_joint(model, split.ztrain, cfg.train, derive_rng(cfg.seed, _FINETUNE))
    return model, trace


def _timed(clock, fn, *args, **kwargs):
    t0 = clock()
    out = fn(*args, **kwargs)
    return out, clock() - t0


def run_offline(cfg: OfflineRunConfig, world: World | None = None, model: NeuralJointModel | None = None,
                clock: Callable[[], float] = time.perf_counter) -> RunRecord:
    """Fine-tune on the labeled split, optimize against the predictor, then spend the oracle once.

    ``model`` (optional) is an already fine-tuned joint model, e.g. from a
    checkpoint; it skips fine-tuning for the ``jsi`` and ``best-of-n`` methods.
    """
    if cfg.n_eval > cfg.budget:
        raise ConfigError(f"evaluation count {cfg.n_eval} exceeds the oracle budget {cfg.budget}")
    world = world or build_world(cfg.world, cfg.seed, cfg.dataset)
    L = world.landscape
    split = offline_split(cfg, world)
    stats, threshold, ztrain = split.stats, split.threshold, split.ztrain
    rng = derive_rng(cfg.seed, _FINETUNE)

    if cfg.method == "no-joint":
        sampler = world.pretrained.copy()
        train_joint(sampler, ztrain, dataclasses.replace(cfg.train, lam=0.0), rng)
        predictor = world.pretrained.copy()
        train_joint(predictor, ztrain, dataclasses.replace(cfg.train, generative_weight=0.0), rng)
    else:
        if model is None:
            model = world.pretrained.copy()
            train_joint(model, ztrain, cfg.train, rng)
        sampler = predictor = model

    ledger = BudgetLedger(cfg.budget)
    oracle = Oracle(L, ledger)
    score_fn = predictor_score_fn(predictor, stats, L.signs)
    srng = derive_rng(cfg.seed, _SAMPLE)
    if cfg.method == "best-of-n":
        (_, cands, scores), seconds = _timed(
            clock, best_of_n, sampler, score_fn, cfg.best_of_n, cfg.jsi.temperature, srng)
        scored = dict(zip(cands, scores))
    else:
        _, trace = jsi_sample(sampler, score_fn, cfg.jsi, srng, clock=clock)
        seconds = trace.sampling_seconds
        scored = trace.scores
    if ledger.used:
        raise RuntimeError("offline optimization touched the oracle")
    ranked = sorted(scored, key=lambda s: (-scored[s], s))[:cfg.n_eval]
    rows = [_row(i, s, oracle.evaluate(s), stats, L, threshold) for i, s in enumerate(ranked)]
    metrics = _metrics(rows, ranked, L.vocab.eos_index)
    metrics["threshold"] = threshold
    metrics["n_candidates"] = len(scored)
    return RunRecord("offline", cfg.method, cfg.seed, config_snapshot(cfg), rows, metrics,
                     {"budget": ledger.budget, "used": ledger.used},
                     {"sampling_seconds": seconds, "n_samples": len(rows)})


# -- online ------------------------------------------------------------------

def _online_jsi(cfg: OnlineRunConfig, model, score_fn: ScoreFn, ledger: BudgetLedger, reward, rng, clock):
    seconds, it = 0.0, 0
    while ledger.remaining > 0:
        seen = [s for s, _ in score_fn.evaluated]
        _, trace = jsi_sample(model, score_fn, cfg.jsi, rng, max_samples=ledger.remaining,
                              exclude=seen, clock=clock)
        seconds += trace.sampling_seconds
        it += 1
        if not trace.sampled:
            log.warning("support exhausted after %d oracle calls", ledger.used)
            break
        if cfg.retrain_steps == 0 or ledger.remaining == 0:
            continue
        scores = np.atleast_1d(reward(np.stack([c for _, c in score_fn.evaluated])))
        order = np.argsort(-scores, kind="stable")
        keep = order[:max(1, int(cfg.keep_fraction * len(order)))]
        kept = [LabeledExample(score_fn.evaluated[i][0], np.zeros(model.n_outputs)) for i in keep]
        train_joint(model, kept, dataclasses.replace(cfg.retrain, max_steps=cfg.retrain_steps), rng)
    return seconds, it


def run_online(cfg: OnlineRunConfig, world: World | None = None,
               clock: Callable[[], float] = time.perf_counter) -> RunRecord:
    """Spend the oracle budget live; ``cfg.method`` picks JSI or one of the baselines."""
    world = world or build_world(cfg.world, cfg.seed)
    L = world.landscape
    stats = ZScoreStats.from_examples(world.dataset)
    threshold = reference_threshold(world.dataset, cfg.world.active_fraction, L.primary_lower_is_better)
    ledger = BudgetLedger(cfg.budget)
    score_fn = oracle_score_fn(Oracle(L, ledger), stats, L.signs)
    rng = derive_rng(cfg.seed, _SAMPLE)
    extra = {}
    if cfg.method == "jsi":
        reward = lambda comps: aggregate_score(comps, stats, L.signs)
        seconds, extra["outer_iterations"] = _online_jsi(cfg, world.pretrained.copy(), score_fn, ledger,
                                                         reward, rng, clock)
    elif cfg.method == "best-of-n":
        seconds = 0.0
        while ledger.remaining > 0:
            _, dt = _timed(clock, best_of_n, world.pretrained, score_fn,
                           min(cfg.best_of_n, ledger.remaining), cfg.jsi.temperature, rng)
            seconds += dt
    else:
        _, rtrace = reinvent_finetune(world.pretrained.copy(), world.pretrained, score_fn, cfg.reinvent,
                                      rng, ledger=ledger, clock=clock)
        seconds = rtrace.sampling_seconds
    if ledger.used > ledger.budget:
        raise BudgetExhausted("ledger overrun")
    seqs = [s for s, _ in score_fn.evaluated]
    rows = [_row(i, s, c, stats, L, threshold) for i, (s, c) in enumerate(score_fn.evaluated)]
    metrics = _metrics(rows, seqs, L.vocab.eos_index)
    metrics.update(threshold=threshold, n_unique=len(set(seqs)), **extra)
    return RunRecord("online", cfg.method, cfg.seed, config_snapshot(cfg), rows, metrics,
                     {"budget": ledger.budget, "used": ledger.used},
                     {"sampling_seconds": seconds, "n_samples": len(rows)})


# -- ablation ----------------------------------------------------------------

def run_ablation(cfg: OfflineRunConfig, variants: Seq[str], world: World | None = None,
                 clock: Callable[[], float] = time.perf_counter) -> list[RunRecord]:
    """Offline runs of each variant on one world and seed."""
    if not variants:
        raise ConfigError("ablation needs at least one variant")
    unknown = [v for v in variants if v not in ABLATION_VARIANTS]
    if unknown:
        raise ConfigError(f"unknown ablation variant {unknown[0]!r}; expected one of {list(ABLATION_VARIANTS)}")
    world = world or build_world(cfg.world, cfg.seed, cfg.dataset)
    return [run_offline(dataclasses.replace(cfg, method=ABLATION_VARIANTS[v]), world, clock=clock)
            for v in variants]


def comparison_table(records: Seq[RunRecord], names: Seq[str] | None = None) -> str:
    """Tab-separated hit ratio, internal diversity and seconds per sample per record."""
    lines = ["variant\tseed\thit_ratio\tintdiv1\tseconds_per_sample"]
    for i, r in enumerate(records):
        name = names[i] if names else r.method
        div = r.metrics.get("intdiv1")
        tps = time_per_sample(r) if r.timing.get("n_samples") else float("nan")
        lines.append(f"{name}\t{r.seed}\t{r.metrics['hit_ratio']:.4f}\t"
                     f"{'nan' if div is None else f'{div:.4f}'}\t{tps:.6g}")
    return "\n".join(lines) + "\n"
