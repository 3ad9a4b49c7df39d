import itertools
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import confusion_oracle, fraction_metrics, ild_oracle
from recbench.errors import EmptyUniverseError, ListTooShortError, UniverseTooSmallError
from recbench.metrics import (
    ConfusionCounts,
    RankedList,
    ZeroVectorsWarning,
    accuracy,
    accuracy_at_k,
    confusion_counts,
    f1,
    ild_at_k,
    ild_curve,
    item_similarity,
    precision,
    recall,
)


def test_confusion_example():
    assert confusion_counts({1, 2}, {2, 3}, 5) == ConfusionCounts(tp=1, tn=2, fp=1, fn=1)
    c = confusion_counts({4, 5}, {4, 5}, 9)
    assert (c.fp, c.fn) == (0, 0)


def test_confusion_universe_too_small():
    with pytest.raises(UniverseTooSmallError):
        confusion_counts({1, 2}, {3}, 2)


def test_confusion_matches_membership_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        topk = set(rng.choice(100, size=int(rng.integers(0, 20)), replace=False).tolist())
        rel = set(rng.choice(100, size=int(rng.integers(0, 20)), replace=False).tolist())
        c = confusion_counts(topk, rel, 100)
        assert (c.tp, c.tn, c.fp, c.fn) == confusion_oracle(topk, rel, 100)
        assert c.universe == 100


def test_accuracy_examples():
    assert accuracy(ConfusionCounts(4, 3, 2, 1)) == pytest.approx(0.7)
    assert accuracy(ConfusionCounts(5, 5, 0, 0)) == 1.0
    with pytest.raises(EmptyUniverseError):
        accuracy(ConfusionCounts(0, 0, 0, 0))


def test_recall_precision_f1_examples():
    c = ConfusionCounts(tp=3, tn=0, fp=0, fn=1)
    assert recall(c) == 0.75
    assert recall(ConfusionCounts(0, 5, 2, 0)) == 0.0
    assert precision(ConfusionCounts(0, 5, 0, 2)) == 0.0
    assert f1(ConfusionCounts(4, 1, 0, 0)) == 1.0
    assert f1(ConfusionCounts(0, 1, 3, 2)) == 0.0


def test_confusion_metrics_match_fraction_oracle():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        tp, tn, fp, fn = (int(v) for v in rng.integers(0, 30, size=4))
        if tp + tn + fp + fn == 0:
            continue
        c = ConfusionCounts(tp, tn, fp, fn)
        want = fraction_metrics(tp, tn, fp, fn)
        got = (accuracy(c), precision(c), recall(c), f1(c))
        for g, w in zip(got, want):
            assert abs(g - float(w)) <= 1e-12


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.integers(0, 50)] * 4))
def test_f1_zero_and_one_properties(t):
    c = ConfusionCounts(*t)
    p, r, f = precision(c), recall(c), f1(c)
    assert (f == 0) == (p == 0 or r == 0)
    assert (f == 1) == (p == 1 and r == 1)
    assert c.tp + c.tn + c.fp + c.fn == c.universe


def test_accuracy_at_k_examples():
    ranked = RankedList((5, 1, 9, 3, 7), (0.9, 0.8, 0.7, 0.6, 0.5))
    assert accuracy_at_k(ranked, {1, 7, 42}, 5) == 0.4
    assert accuracy_at_k(ranked, {5, 1, 9}, 3) == 1.0
    with pytest.raises(ListTooShortError):
        accuracy_at_k(ranked, {1}, 6)


def test_accuracy_at_k_counting_oracle():
    rng = np.random.default_rng(2)
    for _ in range(300):
        items = rng.permutation(50)[:15].tolist()
        rel = set(rng.choice(50, size=8, replace=False).tolist())
        k = int(rng.integers(1, 16))
        count = 0
        for i in items[:k]:
            for r in rel:
                if i == r:
                    count += 1
        assert accuracy_at_k(items, rel, k) == count / k
        assert accuracy_at_k(items, set(range(50)), k) == 1.0


def test_ranked_list_ordering_rules():
    with pytest.raises(ValueError):
        RankedList((1, 2), (0.1, 0.5))
    with pytest.raises(ValueError):
        RankedList((2, 1), (0.5, 0.5))
    with pytest.raises(ValueError):
        RankedList((1, 1), (0.5, 0.4))
    r = RankedList.from_scores([0.1, 0.5, 0.5, 0.9], 4)
    assert r.items == (3, 1, 2, 0)
    assert RankedList.from_scores([0.1, 0.5, 0.5, 0.9], 2, exclude={3}).items == (1, 2)


def test_item_similarity_examples():
    v = np.array([1.0, 2.0, -1.0])
    assert item_similarity(v, v) == pytest.approx(1.0)
    assert item_similarity(v, -v) == pytest.approx(0.0)
    assert item_similarity([1.0, 0.0], [0.0, 3.0]) == 0.5
    with pytest.warns(ZeroVectorsWarning):
        assert item_similarity([0.0, 0.0], [0.0, 0.0]) == 0.5


def test_ild_examples():
    ranked = RankedList((0, 1), (1.0, 0.5))
    assert ild_at_k(ranked, 1, np.eye(2)) == 0.0
    # cos = 0.2 gives similarity 0.6 both ways
    emb = np.array([[1.0, 0.0], [0.2, np.sqrt(1 - 0.04)]])
    assert ild_at_k(ranked, 2, emb) == pytest.approx(0.4, abs=1e-12)


def test_ild_matches_nested_loop_oracle():
    rng = np.random.default_rng(3)
    for _ in range(200):
        k = int(rng.integers(2, 11))
        emb = rng.normal(size=(20, 4))
        items = rng.permutation(20)[:k].tolist()
        got = ild_at_k(items, k, emb)
        assert abs(got - ild_oracle([emb[i].tolist() for i in items])) <= 1e-12
        assert 0.0 <= got <= 1.0


def test_ild_identical_and_opposite():
    same = np.tile([1.0, 2.0], (5, 1))
    assert ild_at_k(list(range(5)), 5, same) == pytest.approx(0.0, abs=1e-15)
    opposite = np.array([[1.0, 0.0], [-1.0, 0.0]])
    assert ild_at_k([0, 1], 2, opposite) == 1.0


def test_ild_permutation_invariant():
    rng = np.random.default_rng(4)
    emb = rng.normal(size=(6, 3))
    base = ild_at_k(list(range(6)), 6, emb)
    for perm in itertools.islice(itertools.permutations(range(6)), 50):
        assert ild_at_k(list(perm), 6, emb) == pytest.approx(base, abs=1e-12)


def test_ild_curve_matches_pointwise():
    rng = np.random.default_rng(5)
    emb = rng.normal(size=(30, 5))
    items = rng.permutation(30)[:10].tolist()
    curve = ild_curve(items, emb, 10)
    assert curve[0] == 0.0
    for k in range(1, 11):
        assert abs(curve[k - 1] - ild_at_k(items, k, emb)) <= 1e-12


def test_zero_embeddings_do_not_crash():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert 0.0 <= ild_at_k([0, 1, 2], 3, np.zeros((3, 2))) <= 1.0
