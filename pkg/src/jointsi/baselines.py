"""Best-of-N rejection sampling and a minimal REINVENT-style policy-gradient fine-tuner."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models.base import TemperedView, sample_sequences, sequence_logprob
from .models.neural import NeuralJointModel, apply_update
from .models.tabular import LogitTabularModel
from .objectives import BudgetExhausted
from .seqcore import ConfigError

BEST_OF_N_DEFAULT = 256


def best_of_n(model, score_fn, n: int = BEST_OF_N_DEFAULT, temperature: float = 1.0,
              rng: np.random.Generator | None = None, max_len: int | None = None):
    """Draw ``n`` i.i.d. samples, score all of them, return ``(best, samples, scores)``."""
    if n < 1:
        raise ValueError("N must be >= 1")
    view = model if isinstance(model, TemperedView) else TemperedView(model, temperature, max_len)
    seqs = sample_sequences(view, n, rng)
    scores = score_fn.batch(seqs)
    best = int(np.argmax(scores))
    return seqs[best], seqs, scores


@dataclass
class ReinventConfig:
    """``sigma_r`` scales the reward in the augmented likelihood (it plays 1/beta)."""

    sigma_r: float = 80.0
    learning_rate: float = 0.5
    batch_size: int = 64
    steps: int | None = None
    temperature: float = 1.0
    clip_norm: float = 1.0

    def __post_init__(self):
        if not self.sigma_r > 0:
            raise ConfigError("sigma_r must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")


def reinvent_loss(agent, prior, seq, f_val: float, sigma_r: float) -> float:
    """``(log p_prior(x) + sigma_r * f(x) - log p_agent(x))^2``."""
    return (sequence_logprob(prior, seq) + sigma_r * f_val - sequence_logprob(agent, seq)) ** 2


def _complex_logprob(logits: dict, order, max_len, eos, seq) -> complex:
    """log p(x) for a per-row logit table evaluated in complex arithmetic."""
    total = 0j
    for t, tok in enumerate(seq):
        if t >= max_len - 1:
            continue
        ctx = tuple(seq[:t]) if order is None else (tuple(seq[:t])[-order:] if order else ())
        z = logits[ctx]
        finite = np.isfinite(z.real)
        m = np.max(z.real[finite])
        lse = np.log(np.sum(np.exp(z[finite] - m))) + m
        total += z[tok] - lse
    return total


def reinvent_gradient_identity_check(agent: LogitTabularModel, prior, seq, f_val: float,
                                     sigma_r: float, step: float = 1e-20) -> float:
    """Max relative error between two independent gradients of the REINVENT loss.

    Route one differentiates the squared loss numerically by complex-step
    perturbation of every finite logit. Route two is the factored form
    ``-2 * sigma_r * (f - log(p_agent / p_prior) / sigma_r) * grad log p_agent``
    with the closed-form score function of the tabular agent.
    """
    seq = tuple(seq)
    lp_prior = sequence_logprob(prior, seq)
    lp_agent = agent.logprob(seq)
    residual = f_val - (lp_agent - lp_prior) / sigma_r
    score = agent.grad_logprob(seq)
    worst = 0.0
    for ctx, row in agent.logits.items():
        factored = -2.0 * sigma_r * residual * score.get(ctx, np.zeros_like(row))
        for j in np.flatnonzero(np.isfinite(row)):
            pert = {k: v.astype(np.complex128) for k, v in agent.logits.items()}
            pert[ctx][j] += 1j * step
            lp = _complex_logprob(pert, agent.order, agent.max_len, agent.vocab.eos_index, seq)
            loss = (lp_prior + sigma_r * f_val - lp) ** 2
            direct = loss.imag / step
            denom = max(abs(direct), abs(factored[j]))
            if denom == 0.0:
                continue
            worst = max(worst, abs(direct - factored[j]) / denom)
    return worst


@dataclass
class ReinventTrace:
    mean_rewards: list[float] = field(default_factory=list)
    grad_norms: list[float] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)
    samples: list[tuple[int, ...]] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    sampling_seconds: float = 0.0
    budget_exhausted: bool = False


def reinvent_finetune(agent: NeuralJointModel, prior: NeuralJointModel, score_fn, cfg: ReinventConfig,
                      rng: np.random.Generator, ledger=None, clock=None):
    """Sample, score, descend the REINVENT loss until ``cfg.steps`` or the budget runs out.

    ``ledger`` (optional) is consulted to shrink the final batch to what the
    budget still allows; a mid-batch ``BudgetExhausted`` ends the loop cleanly.
    """
    import time

    clock = clock or time.perf_counter
    trace = ReinventTrace()
    step = 0
    while cfg.steps is None or step < cfg.steps:
        n = cfg.batch_size
        if ledger is not None:
            n = min(n, ledger.remaining)
        if n <= 0:
            trace.budget_exhausted = ledger is not None
            break
        t0 = clock()
        seqs = sample_sequences(TemperedView(agent, cfg.temperature), n, rng)
        trace.sampling_seconds += clock() - t0
        rewards = []
        try:
            for s in seqs:
                rewards.append(score_fn(s))
        except BudgetExhausted:
            trace.budget_exhausted = True
        seqs = seqs[:len(rewards)]
        trace.samples.extend(seqs)
        trace.rewards.extend(rewards)
        if not seqs:
            break
        f = np.asarray(rewards)
        lp_agent = agent.sequence_logprobs(seqs)
        lp_prior = prior.sequence_logprobs(seqs)
        resid = lp_prior + cfg.sigma_r * f - lp_agent
        trace.losses.append(float(np.mean(resid ** 2)))
        # grad mean (resid^2) = sum_i (2 resid_i / n) * grad(-log p_agent(x_i))
        _, grads = agent.loss_and_grad(seqs, gen_weights=2.0 * resid / len(seqs))
        trace.grad_norms.append(apply_update(agent, grads, cfg.learning_rate, cfg.clip_norm))
        trace.mean_rewards.append(float(f.mean()))
        step += 1
        if trace.budget_exhausted:
            break
    return agent, trace
