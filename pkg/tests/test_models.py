import numpy as np
import pytest

from gradtoy import toy_loss_check
from recbench.errors import InvalidConfigError, KindMismatchError, UnknownItemError
from recbench.graph import build_graph
from recbench.ingest import ItemRecord, generate_synthetic, sessions_to_events
from recbench.metrics import item_similarity
from recbench.models import (
    KINDS,
    DEFAULT_HYPERPARAMS,
    ModelConfig,
    RecContext,
    embed,
    fit,
    load_model,
    recommend_topk,
    score_gnn,
    score_rnn,
    score_transformer,
)
from recbench.preprocess import run_pipeline

FAST = dict(embed_dim=8, hidden=8, bottleneck=4, channels=2, heads=2, layers=1, max_len=5, epochs=2, seed=0)


@pytest.mark.parametrize("kind", KINDS)
def test_training_loss_gradients(kind, toy):
    assert toy_loss_check(kind, toy) < 1e-4


# ------------------------------------------------------------------ config


def test_for_kind_uses_table_defaults():
    for kind, defaults in DEFAULT_HYPERPARAMS.items():
        cfg = ModelConfig.for_kind(kind)
        for key, value in defaults.items():
            assert getattr(cfg, key) == value
    assert ModelConfig.for_kind("gnn").batch is None
    assert ModelConfig.for_kind("rnn", lr=0.5).lr == 0.5


def test_bad_configs_rejected():
    with pytest.raises(InvalidConfigError):
        ModelConfig.for_kind("lstm")
    with pytest.raises(InvalidConfigError):
        ModelConfig.for_kind("cnn", learning_rate=0.1)
    with pytest.raises(InvalidConfigError):
        ModelConfig.for_kind("cnn", epochs=0).validate()
    with pytest.raises(InvalidConfigError):
        ModelConfig.for_kind("transformer", embed_dim=10, heads=4).validate()


# ------------------------------------------------------------- trained models


@pytest.fixture(scope="module")
def trained(two_block_data):
    train = two_block_data.train_view()
    return {kind: fit(ModelConfig.for_kind(kind, **FAST), train) for kind in KINDS}


@pytest.mark.parametrize("kind", KINDS)
def test_embeddings_and_scores_shapes(kind, trained):
    m = trained[kind]
    assert m.item_embeddings.shape[0] == m.n_items == 20
    expected = m.config.bottleneck if kind == "autoencoder" else m.config.embed_dim
    assert embed(m, 3).shape == (expected,)
    assert len(m.training_log) == m.config.epochs
    assert all(np.isfinite(m.training_log))
    ranked = recommend_topk(m, RecContext((0, 1)), 5)
    assert len(ranked) == 5 and not {0, 1} & set(ranked.items)
    assert list(ranked.scores) == sorted(ranked.scores, reverse=True)


def test_unknown_item_and_kind_mismatch(trained):
    with pytest.raises(UnknownItemError):
        recommend_topk(trained["cnn"], (0, 99), 3)
    with pytest.raises(UnknownItemError):
        embed(trained["cnn"], 20)
    with pytest.raises(KindMismatchError):
        score_rnn(trained["cnn"], (0,))
    with pytest.raises(InvalidConfigError):
        recommend_topk(trained["cnn"], (0,), 21)


def test_recommend_ties_break_by_index(trained):
    m = trained["ncf"]
    saved = m.net.score
    m.net.score = lambda ctx, lengths: np.zeros((len(ctx), m.n_items))
    try:
        assert recommend_topk(m, (3,), 4).items == (0, 1, 2, 4)
        assert recommend_topk(m, (3,), 4, exclude_context=False).items == (0, 1, 2, 3)
    finally:
        m.net.score = saved


def test_autoencoder_always_masks_context(trained):
    ranked = recommend_topk(trained["autoencoder"], (0, 1, 2), 17, exclude_context=False)
    assert not {0, 1, 2} & set(ranked.items)


def test_transformer_positional_switch(trained):
    m = trained["transformer"]
    with_pos = score_transformer(m, (0, 1, 2))
    without = score_transformer(m, (0, 1, 2), positional=False)
    assert not np.allclose(with_pos, without)
    assert m.net.use_positional


def test_gnn_scores_follow_supplied_graph(trained, two_block_data):
    m = trained["gnn"]
    test_graph = build_graph(two_block_data.split.test, two_block_data.item_category)
    base = score_gnn(m, (0, 1))
    assert np.array_equal(base, score_gnn(m, (0, 1), m.net.graph))
    assert not np.allclose(base, score_gnn(m, (0, 1), test_graph))


def test_fit_is_deterministic(two_block_data):
    train = two_block_data.train_view()
    for kind in ("cnn", "siamese", "gnn"):
        a = fit(ModelConfig.for_kind(kind, **FAST), train)
        b = fit(ModelConfig.for_kind(kind, **FAST), train)
        assert a.checkpoint_bytes() == b.checkpoint_bytes()


@pytest.mark.parametrize("kind", KINDS)
def test_save_and_load_round_trip(kind, trained, tmp_path):
    m = trained[kind]
    m.save(tmp_path)
    again = load_model(tmp_path, kind, m.n_items, graph=m.net.graph)
    assert again.checkpoint_bytes() == m.checkpoint_bytes()
    assert np.array_equal(again.item_embeddings, m.item_embeddings)
    ctx = RecContext((4, 5, 6))
    assert recommend_topk(again, ctx, 5).items == recommend_topk(m, ctx, 5).items


def test_load_rejects_other_kind(trained, tmp_path):
    trained["cnn"].save(tmp_path, "model")
    (tmp_path / "model.json").write_text(
        (tmp_path / "model.json").read_text().replace('"kind": "cnn"', '"kind": "ncf"'))
    with pytest.raises(KindMismatchError):
        load_model(tmp_path, "model", 20)


def test_planted_blocks_are_learned(two_block_data):
    """On two clean blocks, same-block items end up closer and get recommended."""
    train = two_block_data.train_view()
    cats = np.asarray(two_block_data.item_category)
    for kind in ("gnn", "autoencoder", "ncf", "siamese"):
        m = fit(ModelConfig.for_kind(kind, seed=0), train)
        within, across = [], []
        for i in range(m.n_items):
            for j in range(i + 1, m.n_items):
                s = item_similarity(m.item_embeddings[i], m.item_embeddings[j])
                (within if cats[i] == cats[j] else across).append(s)
        assert np.mean(within) > np.mean(across)
        # a blind ranking puts about 9/19 of its picks in the anchor's block
        hits = [np.mean(cats[list(recommend_topk(m, (i,), 5).items)] == cats[i]) for i in range(m.n_items)]
        assert np.mean(hits) >= 0.6


def test_cold_items_take_category_mean():
    items, sessions = generate_synthetic(20, 200, 2, 0.1, 5)
    ghost = ItemRecord("ghost", items[0].category, list(items[0].numeric_features))
    data = run_pipeline(sessions_to_events(sessions), items + [ghost])
    train = data.train_view()
    m = fit(ModelConfig.for_kind("ncf", **FAST), train)
    g = data.item_index_map["ghost"]
    assert m.cold_items == [g]
    peers = [i for i in range(data.n_items) if i != g and data.item_category[i] == data.item_category[g]]
    table = m.net.params["item_emb"].data
    np.testing.assert_allclose(table[g], table[peers].mean(axis=0), atol=1e-12)
