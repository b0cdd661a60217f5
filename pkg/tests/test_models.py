import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from jointsi.models import (CheckpointError, LogitTabularModel, NeuralJointModel, TabularJointModel,
                            TemperedView, TrainConfig, TrainingError, enumerate_support, grad_check,
                            joint_loss, joint_loss_grad, load_checkpoint, log_softmax, sample_sequences,
                            save_checkpoint, sequence_logprob, step_logprobs, train_joint)
from jointsi.models.base import NEG_INF, categorical
from jointsi.models.neural import SCORE_HEAD_PARAMS
from jointsi.objectives import default_prior
from jointsi.seqcore import ConfigError, LabeledExample, Vocabulary, make_rng

from oracles import all_sequences, table_row


def test_log_softmax_keeps_masked_entries():
    out = log_softmax(np.array([0.0, NEG_INF, 1.0]))
    assert out[1] == NEG_INF
    assert math.isclose(np.exp(out).sum(), 1.0)
    assert np.all(log_softmax(np.full(3, NEG_INF)) == NEG_INF)


# -- tabular -----------------------------------------------------------------

def test_uniform_logprob():
    v = Vocabulary.letters(4)
    m = TabularJointModel.uniform(v, 10)
    seq = v.encode("ABCD")
    assert math.isclose(sequence_logprob(m, seq), -5 * math.log(5), rel_tol=1e-14)


def test_zero_row_entry_gives_minus_inf():
    v = Vocabulary.letters(2)
    row = np.zeros(v.size)
    row[[v.eos_index, v.index("B")]] = 0.5
    m = TabularJointModel(v, {(): row}, 5, order=0)
    assert sequence_logprob(m, v.encode("BA")) == NEG_INF
    assert math.isfinite(sequence_logprob(m, v.encode("BB")))


def test_sequence_logprob_matches_product_oracle():
    v = Vocabulary.letters(3)
    for seed in range(5):
        m = TabularJointModel.random(v, 5, make_rng(seed), order=None if seed % 2 else 1)
        for seq, p in all_sequences(m).items():
            assert math.isclose(sequence_logprob(m, seq), math.log(p), rel_tol=1e-12, abs_tol=1e-12)


def test_table_validation():
    v = Vocabulary.letters(2)
    with pytest.raises(ValueError, match="distribution"):
        TabularJointModel(v, {(): np.array([0, 0.5, 0.4, 0.0])}, 4)
    with pytest.raises(ValueError, match="BOS"):
        TabularJointModel(v, {(): np.array([0.5, 0.5, 0.0, 0.0])}, 4)


def test_enumerate_support_is_complete():
    v = Vocabulary.letters(2)
    m = TabularJointModel.random(v, 5, make_rng(3), zero_prob=0.3)
    enum = dict(enumerate_support(m, 5))
    ref = all_sequences(m)
    assert set(enum) == set(ref)
    assert math.isclose(sum(math.exp(lp) for lp in enum.values()), 1.0, rel_tol=1e-12)
    with pytest.raises(OverflowError):
        list(enumerate_support(m, 5, limit=3))


def test_tempered_view():
    v = Vocabulary.letters(3)
    m = TabularJointModel.random(v, 6, make_rng(0))
    base = table_row(m, ())
    hot = np.exp(TemperedView(m, 2.0).next_logprobs(()))
    want = base ** 0.5 / (base ** 0.5).sum()
    assert np.allclose(hot, want, atol=1e-14)
    capped = TemperedView(m, 1.0, max_len=3)
    row = capped.next_logprobs((v.index("A"), v.index("B")))
    assert row[v.eos_index] == 0.0 and np.all(np.delete(row, v.eos_index) == NEG_INF)
    assert np.allclose(capped.next_logprobs_batch([(), (2,)]),
                       np.stack([capped.next_logprobs(()), capped.next_logprobs((2,))]))
    with pytest.raises(ValueError):
        TemperedView(m, 0.0)


def test_categorical_never_picks_zero_mass():
    with np.errstate(divide="ignore"):
        rows = np.log(np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.5, 0.0, 0.5]]))
    rng = make_rng(0)
    for _ in range(200):
        a, b = categorical(rows, rng)
        assert a == 2 and b in (1, 3)


def test_sample_sequences_frequencies():
    v = Vocabulary.letters(2)
    m = TabularJointModel.random(v, 4, make_rng(1))
    ref = all_sequences(m)
    seqs = sample_sequences(TemperedView(m, 1.0), 20000, make_rng(2))
    counts = {s: 0 for s in ref}
    for s in seqs:
        counts[s] += 1
    assert max(abs(counts[s] / 20000 - ref[s]) for s in ref) < 0.015


def test_step_logprobs_sum():
    v = Vocabulary.letters(3)
    m = TabularJointModel.random(v, 6, make_rng(0))
    seq = v.encode("CAB")
    assert math.isclose(step_logprobs(m, seq).sum(), sequence_logprob(m, seq), rel_tol=1e-14)


def test_logit_tabular_grad_matches_finite_difference():
    v = Vocabulary.letters(2)
    m = LogitTabularModel.random(v, 4, make_rng(5))
    seq = sample_sequences(m, 1, make_rng(6), max_len=4)[0]
    grads = m.grad_logprob(seq)
    eps = 1e-6
    for ctx, row in m.logits.items():
        for j in np.flatnonzero(np.isfinite(row)):
            up, down = m.copy(), m.copy()
            up.logits[ctx][j] += eps
            down.logits[ctx][j] -= eps
            num = (up.logprob(seq) - down.logprob(seq)) / (2 * eps)
            assert abs(grads.get(ctx, np.zeros(v.size))[j] - num) < 1e-7


# -- neural ------------------------------------------------------------------

def _model(v, seed=0, **kw):
    args = dict(context=3, embed_dim=4, hidden=6, n_outputs=2, rng=make_rng(seed), init_scale=0.5)
    args.update(kw)
    return NeuralJointModel(v, 8, **args)


def _batch(v, rng, n=4, m=2):
    return [LabeledExample(tuple(int(t) for t in rng.integers(2, v.size, size=int(rng.integers(0, 6))))
                           + (v.eos_index,), rng.normal(size=m)) for _ in range(n)]


def test_neural_rows_are_distributions():
    v = Vocabulary.letters(4)
    m = _model(v)
    rows = np.exp(m.next_logprobs_batch([(), (2, 3), (4, 4, 4, 4, 4, 4, 4)]))
    assert np.allclose(rows.sum(axis=1), 1.0)
    assert np.all(rows[:, v.bos_index] == 0.0)
    assert 0.0 < rows[2, v.eos_index] < 1.0
    assert np.exp(TemperedView(m, 1.0).next_logprobs((4,) * 7))[v.eos_index] == 1.0
    assert np.allclose(m.next_logprobs((2, 3)), np.log(rows[1]))


def test_neural_sequence_logprobs_agree_with_rows():
    v = Vocabulary.letters(4)
    m = _model(v, 1)
    seqs = [v.encode("AB"), v.encode(""), v.encode("DDCA")]
    batch = m.sequence_logprobs(seqs)
    for s, lp in zip(seqs, batch):
        assert math.isclose(lp, sequence_logprob(m, s), rel_tol=1e-12)


def test_joint_loss_uniform_model():
    v = Vocabulary.letters(4)
    m = _model(v)
    for k in m.params:
        m.params[k][...] = 0.0
    ex = LabeledExample(v.encode("AB"), [0.0, 0.0])
    assert math.isclose(joint_loss(m, [ex], 0.0), 3 * math.log(5), rel_tol=1e-14)


def test_joint_loss_terms():
    v = Vocabulary.letters(4)
    m = _model(v, 2)
    batch = _batch(v, make_rng(3))
    nll = -float(np.sum(m.sequence_logprobs([ex.sequence for ex in batch])))
    assert math.isclose(joint_loss(m, batch, 0.0), nll, rel_tol=1e-12)
    exact = [LabeledExample(ex.sequence, m.predict(ex.sequence)) for ex in batch]
    assert math.isclose(joint_loss(m, exact, 1.0), nll, rel_tol=1e-12)
    pred = 0.5 * sum(float(np.sum((ex.scores - m.predict(ex.sequence)) ** 2)) for ex in batch)
    assert math.isclose(joint_loss(m, batch, 2.5), nll + 2.5 * pred, rel_tol=1e-12)
    with pytest.raises(ValueError):
        joint_loss(m, [], 1.0)


def test_grad_check_and_score_head_zero_at_lambda_zero():
    v = Vocabulary.letters(4)
    rng = make_rng(4)
    m = _model(v, 4)
    batch = _batch(v, rng)
    assert grad_check(m, batch, lam=1.0) < 1e-4
    _, g = joint_loss_grad(m, batch, 0.0)
    for name in SCORE_HEAD_PARAMS:
        assert np.all(g[name] == 0.0)
    with pytest.raises(ValueError):
        grad_check(m, [], 1.0)
    with pytest.raises(ValueError):
        grad_check(m, batch, 1.0, eps=1e-1)


def test_grad_check_subsample():
    v = Vocabulary.letters(4)
    m = _model(v, 6, hidden=12, embed_dim=8)
    assert grad_check(m, _batch(v, make_rng(6)), 0.7, max_coords=50, rng=make_rng(0)) < 1e-4


def _kl_to_prior(model, prior, prefixes):
    total = 0.0
    for p in prefixes:
        q = table_row(prior, p)
        lm = model.next_logprobs(p)
        mask = q > 0
        total += float(np.sum(q[mask] * (np.log(q[mask]) - lm[mask])))
    return total / len(prefixes)


def test_training_reduces_kl_to_generator_and_leaves_score_head():
    v = Vocabulary.letters(4)
    prior = default_prior(v, 10, seed=3)
    rng = make_rng(0)
    seqs = sample_sequences(TemperedView(prior, 1.0), 1000, rng)
    data = [LabeledExample(s, [0.0]) for s in seqs]
    held = sample_sequences(TemperedView(prior, 1.0), 50, make_rng(99))
    prefixes = sorted({s[:t] for s in held for t in range(min(len(s), 6))})
    m = NeuralJointModel(v, 10, context=2, embed_dim=6, hidden=12, n_outputs=1, rng=make_rng(1))
    head = {k: m.params[k].copy() for k in SCORE_HEAD_PARAMS}
    kl = [_kl_to_prior(m, prior, prefixes)]
    rng = make_rng(2)
    steps = 0
    for _ in range(3):
        _, trace = train_joint(m, data, TrainConfig(lam=0.0, learning_rate=0.1, epochs=2), rng)
        kl.append(_kl_to_prior(m, prior, prefixes))
        steps += len(trace.losses)
    # minibatch noise makes the held-out curve wiggle; every checkpoint must beat the start
    assert all(k < kl[0] for k in kl[1:]) and kl[-1] <= 0.75 * kl[0], kl
    assert all(np.array_equal(head[k], m.params[k]) for k in head)
    assert steps == 6 * math.ceil(1000 / 32) and len(trace.grad_norms) == len(trace.losses)


def test_training_fits_linear_labels():
    v = Vocabulary.letters(3)
    rng = make_rng(5)
    A = v.index("A")

    def example(r):
        body = tuple(int(t) for t in r.integers(2, 5, size=int(r.integers(1, 8))))
        return LabeledExample(body + (v.eos_index,), [2.0 * body.count(A) / len(body) - 1.0])

    train = [example(rng) for _ in range(400)]
    held = [example(rng) for _ in range(100)]
    m = NeuralJointModel(v, 10, context=3, embed_dim=6, hidden=12, n_outputs=1, rng=make_rng(6))

    def mse():
        return float(np.mean([(m.predict(ex.sequence)[0] - ex.scores[0]) ** 2 for ex in held]))

    before = mse()
    train_joint(m, train, TrainConfig(lam=1.0, learning_rate=1.0, epochs=30), make_rng(7))
    assert mse() <= 0.5 * before


def test_training_stops_on_divergence_and_respects_max_steps():
    v = Vocabulary.letters(3)
    data = [LabeledExample(v.encode("AB"), [1e6])]
    m = NeuralJointModel(v, 6, context=2, embed_dim=3, hidden=4, n_outputs=1, rng=make_rng(0))
    _, trace = train_joint(m, data * 10, TrainConfig(lam=1.0, learning_rate=0.1, epochs=50, max_steps=7),
                           make_rng(0))
    assert len(trace.losses) == 7
    m.params["Ws"][...] = np.inf
    with pytest.raises(TrainingError, match="non-finite"):
        train_joint(m, data, TrainConfig(lam=1.0, learning_rate=0.1, epochs=1), make_rng(0))


def test_early_stopping():
    v = Vocabulary.letters(3)
    rng = make_rng(1)
    data = _batch(v, rng, n=40, m=1)
    m = NeuralJointModel(v, 8, context=2, embed_dim=3, hidden=4, n_outputs=1, rng=make_rng(0))
    _, trace = train_joint(m, data, TrainConfig(lam=1.0, learning_rate=0.0, epochs=20, patience=2),
                           make_rng(0), eval_data=data[:5])
    assert trace.stopped_early and len(trace.eval_losses) == 3


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)


# -- checkpoints ---------------------------------------------------------------

def test_neural_checkpoint_roundtrip(tmp_path):
    v = Vocabulary.letters(4)
    m = _model(v, 9)
    save_checkpoint(tmp_path / "m.ckpt", m)
    back = load_checkpoint(tmp_path / "m.ckpt")
    assert back.hyperparams() == m.hyperparams() and back.vocab == v
    assert all(np.array_equal(back.params[k], m.params[k]) for k in m.params)
    save_checkpoint(tmp_path / "m2.ckpt", back)
    assert (tmp_path / "m.ckpt").read_bytes() == (tmp_path / "m2.ckpt").read_bytes()


def test_tabular_checkpoint_roundtrip(tmp_path):
    v = Vocabulary.letters(2)
    m = TabularJointModel.random(v, 4, make_rng(0))
    m.scores = {s: float(i) for i, s in enumerate(all_sequences(m))}
    save_checkpoint(tmp_path / "t.ckpt", m)
    back = load_checkpoint(tmp_path / "t.ckpt")
    for s in all_sequences(m):
        assert sequence_logprob(back, s) == sequence_logprob(m, s)
        assert back.score(s) == m.score(s)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(bad)
    v = Vocabulary.letters(2)
    with pytest.raises(CheckpointError, match="callable"):
        save_checkpoint(tmp_path / "c.ckpt", TabularJointModel.uniform(v, 3, scores=lambda s: 0.0))
    with pytest.raises(CheckpointError, match="unsupported"):
        save_checkpoint(tmp_path / "c.ckpt", object())


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32), st.integers(2, 6))
def test_tabular_support_sums_to_one(seed, max_len):
    v = Vocabulary.letters(2)
    m = TabularJointModel.random(v, max_len, make_rng(seed), zero_prob=0.25)
    total = sum(math.exp(lp) for _, lp in enumerate_support(m, max_len))
    assert abs(total - 1.0) < 1e-12
