"""Self-contained invariant suites run by ``jointsi verify``.

Each suite returns ``(passed, detail)``; ``run_suites`` adds timings and
collects everything into one machine-readable report.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from .baselines import reinvent_gradient_identity_check
from .jsi import global_advantage, individual_advantage_exact, mu_estimate
from .models.base import TemperedView, enumerate_support
from .models.neural import NeuralJointModel, grad_check
from .models.tabular import LogitTabularModel, TabularJointModel
from .objectives import BudgetExhausted, BudgetLedger, gibbs_tilt_exact
from .sbs import sbs_sample
from .seqcore import LabeledExample, Vocabulary, make_rng
from .tilt_trie import TiltedModelView, sequence_prob_under_view


def _tiny(seed: int, n_content: int = 3, max_len: int = 5, order=None):
    vocab = Vocabulary.letters(n_content)
    return TabularJointModel.random(vocab, max_len, make_rng(seed), order=order,
                                    scores=lambda s: float(len(s) % 3) - 0.5 * s.count(2))


def suite_mass_removal(seeds=range(5)):
    worst = 0.0
    for seed in seeds:
        model = _tiny(seed)
        base = TemperedView(model, 1.0)
        support = dict(enumerate_support(base, model.max_len))
        rng = make_rng(1000 + seed)
        seqs = list(support)
        chosen = [seqs[i] for i in rng.choice(len(seqs), size=min(6, len(seqs) - 1), replace=False)]
        view = TiltedModelView(base, 0.0)
        view.insert_round([(s, 0.0) for s in chosen[:3]])
        view.insert_round([(s, 0.0) for s in chosen[3:]])
        removed = sum(math.exp(support[s]) for s in chosen)
        for s, lp in support.items():
            want = 0.0 if s in chosen else math.exp(lp) / (1.0 - removed)
            worst = max(worst, abs(sequence_prob_under_view(view, s) - want))
    return worst < 1e-9, f"max abs error {worst:.3g}"


def suite_tilt_monotone():
    vocab = Vocabulary.letters(2)
    model = TabularJointModel.uniform(vocab, 4)
    ratios = []
    for sigma in (0.5, 1.0, 2.0):
        view = TiltedModelView(TemperedView(model, 1.0), sigma)
        view.insert_round([((vocab.index("A"), vocab.index("B"), vocab.eos_index), 1.0)])
        row = np.exp(view.next_logprobs(()))
        ratios.append(row[vocab.index("A")] / row[vocab.index("B")])
    ok = all(b > a for a, b in zip(ratios, ratios[1:]))
    return ok, "A/B probability ratio over sigma 0.5,1,2: " + ", ".join(f"{r:.6g}" for r in ratios)


def suite_sbs(trials: int = 2000):
    from scipy.stats import chisquare

    model = _tiny(7, n_content=2, max_len=4)
    view = TemperedView(model, 1.0)
    support = dict(enumerate_support(view, model.max_len))
    rng = make_rng(3)
    counts = dict.fromkeys(support, 0)
    for _ in range(trials):
        counts[sbs_sample(view, 1, rng).sequences[0]] += 1
    for _ in range(200):
        k = int(rng.integers(1, len(support) + 1))
        res = sbs_sample(view, k, rng)
        if len(set(res.sequences)) != len(res.sequences):
            return False, "duplicate sequences in one beam"
    exp = np.array([math.exp(support[s]) * trials for s in counts])
    p = chisquare(np.array(list(counts.values())), exp / exp.sum() * trials).pvalue
    return p > 0.01, f"chi-square p={p:.3g} over {trials} draws"


def suite_advantages():
    scores = [0.3, -1.2, 2.5, 0.0, 7.25]
    mu = mu_estimate(scores)
    zero_sum = abs(sum(global_advantage(s, mu) for s in scores))
    model = _tiny(11, n_content=2, max_len=4)
    worst = 0.0
    for prefix in [(), (2,), (3, 2)]:
        p = model.next_probs(prefix)
        tot = sum(p[t] * individual_advantage_exact(model, prefix, int(t)) for t in np.flatnonzero(p > 0))
        worst = max(worst, abs(tot))
    return zero_sum < 1e-12 and worst < 1e-10, f"round sum {zero_sum:.3g}, tower residual {worst:.3g}"


def suite_gradients(seeds=range(3)):
    worst = 0.0
    vocab = Vocabulary.letters(4)
    for seed in seeds:
        rng = make_rng(seed)
        model = NeuralJointModel(vocab, 8, context=3, embed_dim=4, hidden=5, n_outputs=2, rng=rng, init_scale=0.5)
        batch = [LabeledExample(tuple(int(t) for t in rng.integers(2, 6, size=int(rng.integers(1, 6)))) + (1,),
                                rng.normal(size=2)) for _ in range(4)]
        worst = max(worst, grad_check(model, batch, lam=1.0, rng=rng))
    return worst < 1e-4, f"max relative error {worst:.3g}"


def suite_reinvent_identity(n: int = 5):
    vocab = Vocabulary.letters(2)
    worst = 0.0
    for seed in range(n):
        rng = make_rng(seed)
        agent = LogitTabularModel.random(vocab, 4, rng)
        prior = LogitTabularModel.random(vocab, 4, rng)
        seq = next(iter(enumerate_support(agent, 4)))[0]
        worst = max(worst, reinvent_gradient_identity_check(agent, prior, seq, float(rng.normal()), 2.0))
    return worst < 1e-6, f"max relative error {worst:.3g}"


def suite_gibbs():
    model = _tiny(5, n_content=2, max_len=4)
    f = lambda s: float(len(s)) - 2.0
    p = gibbs_tilt_exact(model, f, 0.7)
    q = gibbs_tilt_exact(model, lambda s: f(s) + 3.0, 0.7)
    norm = abs(sum(p.values()) - 1.0)
    shift = max(abs(p[s] - q[s]) for s in p)
    two = Vocabulary.letters(1)
    tm = TabularJointModel(two, {(): np.array([0.0, 0.5, 0.5]), (2,): np.array([0.0, 1.0, 0.0])}, 3)
    r = gibbs_tilt_exact(tm, lambda s: math.log(3.0) if len(s) == 2 else 0.0, 1.0)
    worked = abs(r[(1,)] - 0.25) + abs(r[(2, 1)] - 0.75)
    return norm < 1e-12 and shift < 1e-12 and worked < 1e-12, \
        f"normalization {norm:.3g}, shift {shift:.3g}, worked example {worked:.3g}"


def suite_budget():
    ledger = BudgetLedger(5)
    for _ in range(5):
        ledger.charge()
    try:
        ledger.charge()
    except BudgetExhausted:
        return ledger.used == 5, "exhaustion fires on call budget+1"
    return False, "ledger allowed budget+1 calls"


SUITES: dict[str, Callable[[], tuple[bool, str]]] = {
    "mass_removal": suite_mass_removal,
    "tilt_monotonicity": suite_tilt_monotone,
    "sbs": suite_sbs,
    "advantage_identities": suite_advantages,
    "gradient_check": suite_gradients,
    "reinvent_identity": suite_reinvent_identity,
    "gibbs_tilt": suite_gibbs,
    "budget_ledger": suite_budget,
}


def run_suites(names=None, clock=time.perf_counter) -> dict:
    report = {"suites": [], "passed": True}
    for name in names or SUITES:
        t0 = clock()
        try:
            ok, detail = SUITES[name]()
        except Exception as exc:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        report["suites"].append({"name": name, "passed": bool(ok), "detail": detail,
                                 "seconds": round(clock() - t0, 6)})
        report["passed"] &= bool(ok)
    return report
