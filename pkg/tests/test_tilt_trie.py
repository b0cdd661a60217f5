import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import jointsi.tilt_trie as tilt_trie
from jointsi.models import TabularJointModel, TemperedView, sequence_logprob
from jointsi.seqcore import Vocabulary, make_rng
from jointsi.tilt_trie import (DuplicateSampleError, TiltedModelView, TrieExhaustedError, logdiffexp,
                               sequence_prob_under_view)

from oracles import all_sequences, table_row, tilted_next

V = Vocabulary.letters(2)
EOS, A, B = V.eos_index, V.index("A"), V.index("B")


def _view(model, sigma=1.0, temperature=1.0):
    return TiltedModelView(TemperedView(model, temperature), sigma)


def test_logdiffexp():
    assert math.isclose(logdiffexp(math.log(0.5), math.log(0.2)), math.log(0.3), rel_tol=1e-14)
    assert logdiffexp(0.0, 0.0) == -math.inf
    assert logdiffexp(-1.0, -0.5) == -math.inf
    assert logdiffexp(-1.0, -math.inf) == -1.0


def test_single_sequence_node_statistics():
    m = TabularJointModel.random(V, 5, make_rng(0))
    view = _view(m)
    seq = (A, B, A, EOS)
    view.insert_round([(seq, 0.7)])
    for t in range(1, len(seq) + 1):
        node = view.find(seq[:t])
        tail = math.prod(table_row(m, seq[:j])[seq[j]] for j in range(t - 1, len(seq)))
        assert math.isclose(node.removed_logmass, math.log(tail), rel_tol=1e-12)
        assert node.advantage_sum == 0.7
    assert view.find(seq).exhausted


def test_shared_prefix_sums():
    m = TabularJointModel.random(V, 5, make_rng(1))
    view = _view(m)
    x1, x2 = (A, B, EOS), (A, A, B, EOS)
    view.insert_round([(x1, 1.5), (x2, -0.25)])
    node = view.find((A,))
    q = [math.prod(table_row(m, x[:j])[x[j]] for j in range(0, len(x))) for x in (x1, x2)]
    assert node.advantage_sum == 1.25
    assert math.isclose(math.exp(node.removed_logmass), sum(q), rel_tol=1e-12)


def test_empty_trie_is_the_base():
    m = TabularJointModel.random(V, 5, make_rng(2))
    base = TemperedView(m, 0.8)
    view = TiltedModelView(base, 1.3)
    for seq in all_sequences(m):
        assert sequence_prob_under_view(view, seq) == math.exp(sequence_logprob(base, seq))
    assert np.array_equal(view.next_logprobs(()), base.next_logprobs(()))


def test_single_continuation_exhausts_token():
    row = np.zeros(V.size)
    row[[EOS, A, B]] = [0.3, 0.3, 0.4]
    after_a = np.zeros(V.size)
    after_a[EOS] = 1.0
    m = TabularJointModel(V, {(): row, (A,): after_a, (B,): row}, 4)
    view = _view(m, 2.0)
    view.insert_round([((A, EOS), 5.0)])
    probs = np.exp(view.next_logprobs(()))
    assert probs[A] == 0.0
    assert np.allclose(probs[[EOS, B]], [0.3 / 0.7, 0.4 / 0.7], atol=1e-15)


def test_sampled_sequence_gets_zero_probability():
    m = TabularJointModel.random(V, 5, make_rng(3))
    view = _view(m)
    seq = (B, B, EOS)
    view.insert_round([(seq, 1.0)])
    assert sequence_prob_under_view(view, seq) == 0.0


def test_duplicates_rejected():
    m = TabularJointModel.random(V, 4, make_rng(4))
    view = _view(m)
    with pytest.raises(DuplicateSampleError):
        view.insert_round([((A, EOS), 1.0), ((A, EOS), 2.0)])
    view.insert_round([((A, EOS), 1.0)])
    with pytest.raises(DuplicateSampleError):
        view.insert_round([((A, EOS), 1.0)])


def test_insert_validation():
    row = np.zeros(V.size)
    row[[EOS, A]] = 0.5
    m = TabularJointModel(V, {(): row}, 4, order=0)
    view = _view(m)
    with pytest.raises(ValueError, match="EOS"):
        view.insert_round([((A, A), 0.0)])
    with pytest.raises(ValueError, match="zero probability"):
        view.insert_round([((B, EOS), 0.0)])
    with pytest.raises(ValueError):
        TiltedModelView(TemperedView(m, 1.0), -0.1)


def test_three_element_items_accepted():
    m = TabularJointModel.random(V, 4, make_rng(5))
    a, b = _view(m), _view(m)
    a.insert_round([((A, EOS), 0.5)])
    b.insert_round([((A, EOS), np.array([-1.0, -2.0]), 0.5)])
    assert np.array_equal(a.next_logprobs(()), b.next_logprobs(()))


def test_full_exhaustion():
    m = TabularJointModel.random(V, 3, make_rng(6))
    view = _view(m)
    seqs = list(all_sequences(m))
    view.insert_round([(s, 0.0) for s in seqs[:-1]])
    assert not view.exhausted
    assert math.isclose(sequence_prob_under_view(view, seqs[-1]), 1.0, rel_tol=1e-12)
    view.insert_round([(seqs[-1], 0.0)])
    assert view.exhausted
    with pytest.raises(TrieExhaustedError):
        view.next_logprobs(())
    assert sequence_prob_under_view(view, seqs[0]) == 0.0


def test_dump_format():
    m = TabularJointModel.random(V, 4, make_rng(7))
    view = _view(m)
    view.insert_round([((A, EOS), 1.0), ((A, B, EOS), -1.0)])
    lines = view.dump().splitlines()
    assert [l.split("\t")[:2] for l in lines] == [["1", "A"], ["2", "<eos>"], ["2", "B"], ["3", "<eos>"]]
    first = lines[0].split("\t")
    assert float(first[4]) == 0.0 and first[5] == "0"
    assert lines[1].split("\t")[5] == "1"
    assert _view(m).dump() == ""


def test_fault_hook_reverses_tilt(monkeypatch):
    m = TabularJointModel.uniform(V, 4)
    view = _view(m, 1.0)
    view.insert_round([((A, A, EOS), 1.0)])
    up = np.exp(view.next_logprobs(()))
    monkeypatch.setattr(tilt_trie, "FAULT_FLIP_SIGMA", True)
    down = np.exp(view.next_logprobs(()))
    assert up[A] > up[B] and down[A] < down[B]


def test_temperature_lives_below_the_trie():
    m = TabularJointModel.random(V, 4, make_rng(8))
    view = _view(m, 0.0, temperature=0.5)
    seq = next(iter(all_sequences(m)))
    view.insert_round([(seq, 0.0)])
    hot = {s: math.exp(sequence_logprob(TemperedView(m, 0.5), s)) for s in all_sequences(m)}
    gone = hot[seq]
    for s, p in hot.items():
        want = 0.0 if s == seq else p / (1.0 - gone)
        assert abs(sequence_prob_under_view(view, s) - want) < 1e-12


@st.composite
def trie_states(draw):
    seed = draw(st.integers(0, 2 ** 32))
    max_len = draw(st.integers(2, 5))
    model = TabularJointModel.random(V, max_len, make_rng(seed), order=draw(st.sampled_from([None, 1])),
                                     zero_prob=draw(st.sampled_from([0.0, 0.3])))
    seqs = sorted(all_sequences(model))
    chosen = draw(st.lists(st.sampled_from(seqs), unique=True, max_size=len(seqs) - 1))
    cut = draw(st.integers(0, len(chosen)))
    advs = draw(st.lists(st.floats(-2, 2), min_size=len(chosen), max_size=len(chosen)))
    rounds = [r for r in (list(zip(chosen[:cut], advs[:cut])), list(zip(chosen[cut:], advs[cut:]))) if r]
    sigma = draw(st.sampled_from([0.0, 0.5, 1.0, 1.75]))
    return model, rounds, sigma


@settings(max_examples=80, deadline=None)
@given(trie_states())
def test_view_is_a_distribution_over_unsampled_sequences(state):
    model, rounds, sigma = state
    view = _view(model, sigma)
    for r in rounds:
        view.insert_round(r)
    sampled = {s for r in rounds for s, _ in r}
    probs = {s: sequence_prob_under_view(view, s) for s in all_sequences(model)}
    assert abs(sum(probs.values()) - 1.0) < 1e-9
    assert all(probs[s] == 0.0 for s in sampled)


@settings(max_examples=80, deadline=None)
@given(trie_states())
def test_tilted_rows_match_enumeration(state):
    model, rounds, sigma = state
    view = _view(model, sigma)
    for r in rounds:
        view.insert_round(r)
    prefixes = {s[:t] for s in all_sequences(model) for t in range(len(s))}
    for pre in prefixes:
        ref = tilted_next(model, pre, rounds, sigma)
        if ref is None:
            with pytest.raises(TrieExhaustedError):
                view.next_logprobs(pre)
            continue
        assert np.max(np.abs(np.exp(view.next_logprobs(pre)) - ref)) < 1e-9
