"""Brute-force references that read tabular models directly and share no code with the package."""

from __future__ import annotations

import itertools
import math

import numpy as np


def table_row(model, prefix):
    """Next-token probabilities of a TabularJointModel straight from its table."""
    v = model.vocab
    if len(prefix) >= model.max_len - 1:
        row = np.zeros(v.size)
        row[v.eos_index] = 1.0
        return row
    if model.order is None:
        ctx = tuple(prefix)
    elif model.order == 0:
        ctx = ()
    else:
        ctx = tuple(prefix)[-model.order:]
    return model.table[ctx]


def all_sequences(model):
    """Every EOS-terminated sequence with positive probability, and that probability."""
    v = model.vocab
    out = {}
    for n in range(model.max_len):
        for body in itertools.product(v.content_indices, repeat=n):
            seq = body + (v.eos_index,)
            p = 1.0
            for t, tok in enumerate(seq):
                p *= table_row(model, seq[:t])[tok]
                if p == 0.0:
                    break
            if p > 0.0:
                out[seq] = p
    return out


def tilted_next(model, prefix, rounds, sigma):
    """Next-token distribution after mass removal plus advantage tilt, by enumeration.

    ``rounds`` is a list of lists of ``(sequence, advantage)``. For each child
    token the logit is log(unsampled mass below it) + sigma * (summed advantage
    of sampled sequences below it), then normalized.
    """
    support = all_sequences(model)
    sampled = {s: 0.0 for r in rounds for s, _ in r}
    for r in rounds:
        for s, a in r:
            sampled[s] += a
    prefix = tuple(prefix)
    p_prefix = sum(p for s, p in support.items() if s[:len(prefix)] == prefix)
    weights = np.zeros(model.vocab.size)
    for tok in range(model.vocab.size):
        child = prefix + (tok,)
        below = [s for s in support if s[:len(child)] == child]
        if not below:
            continue
        unsampled = sum(support[s] for s in below if s not in sampled) / p_prefix
        adv = sum(sampled[s] for s in below if s in sampled)
        if unsampled > 0.0:
            weights[tok] = unsampled * math.exp(sigma * adv)
    total = weights.sum()
    return weights / total if total > 0 else None


def expected_score(model, prefix, score):
    support = all_sequences(model)
    prefix = tuple(prefix)
    below = {s: p for s, p in support.items() if s[:len(prefix)] == prefix}
    z = sum(below.values())
    return sum(p * score(s) for s, p in below.items()) / z
