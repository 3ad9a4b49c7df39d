import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recbench.errors import InvalidDimError, NonFiniteInputError
from recbench.ingest import InteractionEvent, ItemRecord, generate_synthetic, sessions_to_events
from recbench.preprocess import (
    PipelineConfig,
    check_preprocessed,
    clean,
    encode_categoricals,
    normalize_text,
    reduce_dimensions,
    run_pipeline,
    scale_numeric,
    tokenize,
)


def test_clean_removes_duplicate_events():
    e = InteractionEvent("u", "a", "view", 5)
    report = {}
    events, _ = clean([e, e, e], [], report)
    assert events == [e]
    assert report["duplicates_removed"] == 2


def test_clean_median_imputation():
    items = [
        ItemRecord("x", "c", [1.0, math.nan, 3.0]),
        ItemRecord("p", "c", [2.0, 4.0, 4.0]),
        ItemRecord("q", "c", [3.0, 6.0, 5.0]),
        ItemRecord("r", "c", [0.0, 5.0, 4.0]),
    ]
    _, cleaned = clean([], items)
    # column 1 median over {4, 6, 5} is 5
    assert cleaned[0].numeric_features == [1.0, 5.0, 3.0]


def test_clean_mode_for_missing_category():
    items = [ItemRecord("a", "x"), ItemRecord("b", "y"), ItemRecord("c", "y"), ItemRecord("d", None)]
    report = {}
    _, cleaned = clean([], items, report)
    assert cleaned[3].category == "y"
    assert report["categories_imputed"] == 1


def test_clean_matches_set_dedup_oracle():
    rng = np.random.default_rng(3)
    base = [InteractionEvent(f"u{int(rng.integers(30))}", f"i{int(rng.integers(80))}", "view", int(rng.integers(10**6)))
            for _ in range(950)]
    dup_idx = rng.integers(0, len(base), size=50)
    log = base + [base[i] for i in dup_idx]
    rng.shuffle(log)
    events, _ = clean(log, [])
    oracle = {(e.user_id, e.item_id, e.event_kind, e.timestamp) for e in log}
    assert len(events) == len(oracle)


@pytest.mark.parametrize(
    "raw,expected",
    [("Blu-Ray  PLAYER!", "blu ray player"), ("", ""), ("  Café+2024 ", "café 2024")],
)
def test_normalize_text_examples(raw, expected):
    assert normalize_text(raw) == expected


@settings(max_examples=200, deadline=None)
@given(st.text())
def test_normalize_text_idempotent(s):
    once = normalize_text(s)
    assert normalize_text(once) == once


def test_tokenize_with_stemmer_hook():
    assert tokenize("Running Shoes", stemmer=lambda t: t.rstrip("s")) == ["running", "shoe"]


def test_encode_categoricals_sorted():
    items = [ItemRecord(str(i), c) for i, c in enumerate("bac")]
    mapping, codes = encode_categoricals(items)
    assert mapping == {"a": 0, "b": 1, "c": 2}
    assert codes == [1, 0, 2]
    assert encode_categoricals([ItemRecord("z", "only")])[0] == {"only": 0}


def test_encode_categoricals_bijection_oracle():
    rng = np.random.default_rng(1)
    cats = [f"cat{int(v)}" for v in rng.choice(10_000, size=50, replace=False)]
    mapping, _ = encode_categoricals([ItemRecord(str(i), c) for i, c in enumerate(cats)])
    oracle = {c: i for i, c in enumerate(sorted(cats))}
    assert mapping == oracle


def test_scale_numeric_examples():
    np.testing.assert_array_equal(scale_numeric([[2.0], [4.0], [6.0]]), [[0.0], [0.5], [1.0]])
    np.testing.assert_array_equal(scale_numeric([[7.0], [7.0]]), [[0.0], [0.0]])
    with pytest.raises(NonFiniteInputError):
        scale_numeric([[1.0], [math.inf]])


def test_scale_numeric_column_range():
    x = np.random.default_rng(2).normal(size=(100, 8)) * 10
    y = scale_numeric(x)
    np.testing.assert_array_equal(y.min(axis=0), np.zeros(8))
    np.testing.assert_array_equal(y.max(axis=0), np.ones(8))


def test_reduce_full_rank_reconstruction():
    x = np.random.default_rng(4).normal(size=(30, 5))
    z, info = reduce_dimensions(x, 5, return_info=True)
    centered = x - x.mean(axis=0)
    recon = z @ info["directions"]
    assert np.linalg.norm(recon - centered) / np.linalg.norm(centered) < 1e-8


def test_reduce_rank_one():
    rng = np.random.default_rng(5)
    x = np.outer(rng.normal(size=40), rng.normal(size=4))
    _, info = reduce_dimensions(x, 1, return_info=True)
    assert info["explained_variance_ratio"][0] >= 0.999


def test_reduce_matches_eigen_oracle():
    x = np.random.default_rng(6).normal(size=(50, 6)) * np.array([5, 4, 3, 2, 1, 0.5])
    z, info = reduce_dimensions(x, 3, return_info=True)
    centered = x - x.mean(axis=0)
    vals, vecs = np.linalg.eigh(centered.T @ centered / 49)
    top = vecs[:, ::-1][:, :3].T
    for got, want in zip(info["directions"], top):
        sign = np.sign(got @ want)
        np.testing.assert_allclose(got, sign * want, atol=1e-6)
    np.testing.assert_allclose(z, centered @ info["directions"].T)
    d = info["directions"]
    gram = np.abs(d @ d.T - np.eye(3))
    assert gram.max() < 1e-6


def test_reduce_invalid_dim():
    with pytest.raises(InvalidDimError):
        reduce_dimensions(np.ones((5, 3)), 4)
    with pytest.raises(InvalidDimError):
        reduce_dimensions(np.ones((5, 3)), 0)


def test_pipeline_deterministic():
    items, sessions = generate_synthetic(40, 120, 4, 0.1, 7)
    a = run_pipeline(sessions_to_events(sessions), items)
    b = run_pipeline(sessions_to_events(sessions), items)
    assert a.fingerprint() == b.fingerprint()
    assert a.feature_matrix.tobytes() == b.feature_matrix.tobytes()


def test_pipeline_drops_fully_missing_column():
    items = [ItemRecord("a", "x", [1.0, math.nan]), ItemRecord("b", "y", [2.0, math.nan])]
    events = [InteractionEvent("u", "a", "view", 0), InteractionEvent("u", "b", "view", 60)]
    data = run_pipeline(events, items)
    assert "num1" in data.report["columns_dropped"]
    assert "num1" not in data.feature_names
    assert check_preprocessed(data) == []


def test_pipeline_invariants_end_to_end():
    items, sessions = generate_synthetic(80, 1000, 4, 0.1, 8)
    data = run_pipeline(sessions_to_events(sessions), items)
    assert check_preprocessed(data) == []
    used = {i for s in sessions for i in s.items} | {it.item_id for it in items}
    assert set(data.item_index_map) == used
    assert sorted(data.item_index_map.values()) == list(range(len(used)))
    assert data.feature_matrix.min() >= 0.0 and data.feature_matrix.max() <= 1.0


def test_pipeline_adds_items_seen_only_in_events():
    items = [ItemRecord("a", "x", [1.0])]
    events = [InteractionEvent("u", "a", "view", 0), InteractionEvent("u", "ghost", "view", 60)]
    data = run_pipeline(events, items)
    assert data.n_items == 2
    assert data.report["items_added_from_events"] == 1
    assert data.items[data.item_index_map["ghost"]].category == "x"


def test_pipeline_optional_reduction():
    items, sessions = generate_synthetic(40, 100, 4, 0.1, 2)
    data = run_pipeline(sessions_to_events(sessions), items, PipelineConfig(reduce_dim=2))
    assert data.feature_matrix.shape == (40, 2)
    assert len(data.report["explained_variance_ratio"]) == 2
