"""Shared model plumbing: configs, contexts, the training loop and dispatch."""

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..autodiff import Optimizer, Tape
from ..autodiff import checkpoint
from ..errors import (
    DivergedLossError,
    EmptyTrainingSetError,
    InvalidConfigError,
    KindMismatchError,
    NonFiniteError,
    UnknownItemError,
)
from ..metrics import RankedList

log = logging.getLogger(__name__)

KINDS = ("cnn", "rnn", "gnn", "autoencoder", "transformer", "ncf", "siamese")

# learning rate, batch size and epochs per architecture; gnn trains full-batch
DEFAULT_HYPERPARAMS = {
    "cnn": dict(lr=0.001, batch=128, epochs=30),
    "rnn": dict(lr=0.01, batch=64, epochs=50, max_len=10, dropout=0.5),
    "gnn": dict(lr=0.005, batch=None, epochs=40),
    "autoencoder": dict(lr=0.001, batch=256, epochs=50),
    "transformer": dict(lr=0.0001, batch=32, epochs=20),
    "ncf": dict(lr=0.0005, batch=128, epochs=30),
    "siamese": dict(lr=0.0005, batch=64, epochs=35),
}

KIND_EXTRAS = {
    "cnn": dict(dropout=0.2),
    "siamese": dict(neg_samples=1),
}


@dataclass
class ModelConfig:
    kind: str
    lr: float = 0.001
    batch: int | None = 128
    epochs: int = 30
    seed: int = 0
    embed_dim: int = 32
    hidden: int = 64
    max_len: int = 10
    dropout: float = 0.0
    heads: int = 4
    layers: int = 2
    bottleneck: int = 16
    channels: int = 8
    kernel: int = 3
    pool: int = 2
    margin: float = 0.5
    neg_samples: int = 4
    mask_rate: float = 0.2

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "ModelConfig":
        if kind not in DEFAULT_HYPERPARAMS:
            raise InvalidConfigError(f"unknown model kind {kind!r}", stage="config")
        known = {f.name for f in fields(cls)}
        unknown = set(overrides) - known
        if unknown:
            raise InvalidConfigError(f"unknown model options {sorted(unknown)}", stage="config")
        values = {**DEFAULT_HYPERPARAMS[kind], **KIND_EXTRAS.get(kind, {}), **{k: v for k, v in overrides.items() if v is not None}}
        return cls(kind=kind, **values)

    def validate(self):
        if self.kind not in KINDS:
            raise InvalidConfigError(f"unknown model kind {self.kind!r}", stage="config")
        if self.epochs < 1:
            raise InvalidConfigError("epochs must be >= 1", stage="config")
        if self.lr <= 0:
            raise InvalidConfigError("lr must be positive", stage="config")
        if self.batch is not None and self.batch < 1:
            raise InvalidConfigError("batch must be >= 1", stage="config")
        if self.embed_dim % self.heads and self.kind == "transformer":
            raise InvalidConfigError("embed_dim must be divisible by heads", stage="config")
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidConfigError("dropout must lie in [0, 1)", stage="config")


@dataclass(frozen=True)
class RecContext:
    """Recently interacted items, oldest first."""

    item_sequence: tuple

    def __post_init__(self):
        if not self.item_sequence:
            raise ValueError("context needs at least one item")

    @property
    def anchor(self) -> int:
        return self.item_sequence[-1]


def pad_contexts(contexts, max_len: int, pad: int):
    """Right-padded (Q, max_len) index array plus true lengths; keeps the most recent items."""
    seqs = [c.item_sequence if isinstance(c, RecContext) else tuple(c) for c in contexts]
    out = np.full((len(seqs), max_len), pad, dtype=np.int64)
    lengths = np.zeros(len(seqs), dtype=np.int64)
    for r, s in enumerate(seqs):
        s = s[-max_len:]
        out[r, : len(s)] = s
        lengths[r] = len(s)
    return out, lengths


def next_item_examples(sessions, max_len: int, pad: int):
    """Every (prefix, next item) pair of the training sessions."""
    ctx, targets = [], []
    for s in sessions:
        items = list(s.items)
        for t in range(1, len(items)):
            ctx.append(tuple(items[max(0, t - max_len) : t]))
            targets.append(items[t])
    if not ctx:
        return np.zeros((0, max_len), dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    padded, lengths = pad_contexts(ctx, max_len, pad)
    return padded, lengths, np.asarray(targets, dtype=np.int64)


def minibatches(n: int, batch: int | None, rng: np.random.Generator):
    order = rng.permutation(n)
    step = n if batch is None else batch
    for start in range(0, n, step):
        yield order[start : start + step]


class Network:
    """Interface every architecture implements.

    ``params`` is an ordered ``{name: Tensor}`` mapping. ``prepare`` turns
    training data into an example store once; ``batches`` yields per-epoch
    mini-batches from it; ``loss`` builds the differentiable objective;
    ``score`` maps padded contexts to (Q, n_items) scores without recording.
    """

    kind = ""

    def __init__(self, cfg: ModelConfig, n_items: int, rng: np.random.Generator, graph=None):
        self.cfg = cfg
        self.n_items = n_items
        self.pad = n_items
        self.graph = graph
        self.params: dict = {}

    def prepare(self, sessions, rng):
        raise NotImplementedError

    def batches(self, store, rng):
        raise NotImplementedError

    def loss(self, batch, rng):
        raise NotImplementedError

    def score(self, ctx, lengths) -> np.ndarray:
        raise NotImplementedError

    def item_embeddings(self) -> np.ndarray:
        raise NotImplementedError

    def embedding_tables(self) -> list[str]:
        """Names of (n_items[+1], d) tables whose rows are per-item parameters."""
        return []


@dataclass
class TrainedModel:
    kind: str
    config: ModelConfig
    net: Network
    item_embeddings: np.ndarray
    training_log: list[float]
    seen: np.ndarray
    cold_items: list[int] = field(default_factory=list)
    data_fingerprint: str = ""

    @property
    def n_items(self) -> int:
        return self.net.n_items

    @property
    def parameters(self) -> dict:
        return {k: v.data for k, v in self.net.params.items()}

    def checkpoint_bytes(self) -> bytes:
        return checkpoint.dumps(self.parameters)

    def sidecar(self) -> dict:
        return {
            "kind": self.kind,
            "config": asdict(self.config),
            "seed": self.config.seed,
            "data_fingerprint": self.data_fingerprint,
            "cold_items": self.cold_items,
            "training_log": self.training_log,
        }

    def save(self, directory, stem=None):
        from pathlib import Path

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = stem or self.kind
        (d / f"{stem}.ckpt").write_bytes(self.checkpoint_bytes())
        (d / f"{stem}.json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _registry():
    from . import autoencoder, cnn, gnn, ncf, rnn, siamese, transformer

    return {
        "cnn": cnn.CNNNet,
        "rnn": rnn.LSTMNet,
        "gnn": gnn.GNNNet,
        "autoencoder": autoencoder.AutoencoderNet,
        "transformer": transformer.TransformerNet,
        "ncf": ncf.NCFNet,
        "siamese": siamese.SiameseNet,
    }


def build_network(cfg: ModelConfig, n_items: int, graph=None) -> Network:
    """Fresh network with seeded initialization (no training)."""
    rng = np.random.default_rng(cfg.seed)
    return _registry()[cfg.kind](cfg, n_items, rng, graph=graph)


def _apply_cold_start(net: Network, seen: np.ndarray, item_category):
    """Replace per-item parameter rows of unseen items by their category mean."""
    cold = np.flatnonzero(~seen)
    if not len(cold):
        return []
    cats = np.asarray(item_category) if item_category is not None else np.zeros(len(seen), dtype=np.int64)
    for name in net.embedding_tables():
        table = net.params[name].data
        global_mean = table[: len(seen)][seen].mean(axis=0) if seen.any() else np.zeros(table.shape[1:])
        for i in cold:
            peers = seen & (cats == cats[i])
            table[i] = table[: len(seen)][peers].mean(axis=0) if peers.any() else global_mean
    return cold.tolist()


def fit(config: ModelConfig, data, g=None) -> TrainedModel:
    """Train one architecture on ``data.sessions`` for exactly ``config.epochs`` epochs."""
    config.validate()
    sessions = [s for s in data.sessions if len(s.items) >= 1]
    if not sessions or sum(len(s.items) >= 2 for s in sessions) == 0:
        raise EmptyTrainingSetError("no training session with two or more items", stage="fit")
    if config.kind in ("gnn", "siamese") and g is None:
        from ..graph import build_graph

        g = build_graph(sessions, data.item_category)
    n_items = data.n_items
    net = build_network(config, n_items, graph=g)
    rng = np.random.default_rng(config.seed + 1)
    store = net.prepare(sessions, rng)
    opt = Optimizer(list(net.params.values()), "adam", config.lr)
    history = []
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        try:
            for batch in net.batches(store, rng):
                with Tape() as tape:
                    loss = net.loss(batch, rng)
                tape.backward(loss)
                opt.step()
                opt.zero_grad()
                total += loss.item()
                count += 1
        except NonFiniteError as exc:
            raise DivergedLossError(epoch) from exc
        mean_loss = total / max(count, 1)
        if not np.isfinite(mean_loss):
            raise DivergedLossError(epoch)
        history.append(mean_loss)
        log.debug("%s epoch %d loss %.6f", config.kind, epoch, mean_loss)

    seen = np.zeros(n_items, dtype=bool)
    for s in sessions:
        seen[list(s.items)] = True
    cold = _apply_cold_start(net, seen, getattr(data, "item_category", None))
    fingerprint = data.fingerprint() if hasattr(data, "fingerprint") else ""
    return TrainedModel(
        kind=config.kind,
        config=config,
        net=net,
        item_embeddings=net.item_embeddings(),
        training_log=history,
        seen=seen,
        cold_items=cold,
        data_fingerprint=fingerprint,
    )


def load_model(directory, stem: str, n_items: int, graph=None) -> TrainedModel:
    """Rebuild a :class:`TrainedModel` from the checkpoint and sidecar written by ``save``."""
    from pathlib import Path

    d = Path(directory)
    meta = json.loads((d / f"{stem}.json").read_text(encoding="utf-8"))
    cfg = ModelConfig(**meta["config"])
    net = build_network(cfg, n_items, graph=graph)
    params = checkpoint.loads((d / f"{stem}.ckpt").read_bytes())
    if set(params) != set(net.params):
        raise KindMismatchError(f"checkpoint {stem} does not match a {cfg.kind} network", stage="load")
    for name, arr in params.items():
        if arr.shape != net.params[name].shape:
            raise KindMismatchError(f"parameter {name} has shape {arr.shape}, expected {net.params[name].shape}", stage="load")
        net.params[name].data = arr
    seen = np.ones(n_items, dtype=bool)
    seen[meta["cold_items"]] = False
    return TrainedModel(
        kind=cfg.kind,
        config=cfg,
        net=net,
        item_embeddings=net.item_embeddings(),
        training_log=list(meta["training_log"]),
        seen=seen,
        cold_items=list(meta["cold_items"]),
        data_fingerprint=meta["data_fingerprint"],
    )


# ------------------------------------------------------------------- scoring


def _check_kind(model: TrainedModel, kind: str):
    if model.kind != kind:
        raise KindMismatchError(f"expected a {kind} model, got {model.kind}", stage="score")


def _score_one(model: TrainedModel, ctx) -> np.ndarray:
    ctx = ctx if isinstance(ctx, RecContext) else RecContext(tuple(ctx))
    for i in ctx.item_sequence:
        if not 0 <= i < model.n_items:
            raise UnknownItemError(f"item {i} outside the catalog", stage="score")
    padded, lengths = pad_contexts([ctx], model.config.max_len, model.net.pad)
    return model.net.score(padded, lengths)[0]


def score_contexts(model: TrainedModel, contexts) -> np.ndarray:
    """Scores for many contexts at once, shape (Q, n_items)."""
    padded, lengths = pad_contexts(contexts, model.config.max_len, model.net.pad)
    return model.net.score(padded, lengths)


def score_cnn(model, ctx):
    _check_kind(model, "cnn")
    return _score_one(model, ctx)


def score_rnn(model, ctx):
    _check_kind(model, "rnn")
    return _score_one(model, ctx)


def score_gnn(model, ctx, g=None):
    """GNN scores; ``g`` optionally swaps in another propagation graph."""
    _check_kind(model, "gnn")
    if g is None or g is model.net.graph:
        return _score_one(model, ctx)
    other = replace_graph(model, g)
    return _score_one(other, ctx)


def replace_graph(model, g):
    from .gnn import GNNNet

    net = GNNNet.__new__(GNNNet)
    net.__dict__.update(model.net.__dict__)
    net.set_graph(g)
    return replace(model, net=net, item_embeddings=net.item_embeddings())


def score_autoencoder(model, ctx):
    _check_kind(model, "autoencoder")
    return _score_one(model, ctx)


def score_transformer(model, ctx, positional: bool = True):
    _check_kind(model, "transformer")
    net = model.net
    previous = net.use_positional
    net.use_positional = positional
    try:
        return _score_one(model, ctx)
    finally:
        net.use_positional = previous


def score_ncf(model, ctx):
    _check_kind(model, "ncf")
    return _score_one(model, ctx)


def score_siamese(model, ctx):
    _check_kind(model, "siamese")
    return _score_one(model, ctx)


SCORERS = {
    "cnn": score_cnn,
    "rnn": score_rnn,
    "gnn": score_gnn,
    "autoencoder": score_autoencoder,
    "transformer": score_transformer,
    "ncf": score_ncf,
    "siamese": score_siamese,
}


def recommend_topk(model: TrainedModel, ctx, k: int, exclude_context: bool = True) -> RankedList:
    """Top-``k`` items by (-score, index). Autoencoder rankings always mask the context."""
    if not 1 <= k <= model.n_items:
        raise InvalidConfigError(f"k must lie in [1, {model.n_items}]", stage="recommend")
    ctx = ctx if isinstance(ctx, RecContext) else RecContext(tuple(ctx))
    scores = SCORERS[model.kind](model, ctx)
    exclude = set(ctx.item_sequence) if exclude_context or model.kind == "autoencoder" else ()
    return RankedList.from_scores(scores, k, exclude)


def embed(model: TrainedModel, i: int) -> np.ndarray:
    if not 0 <= i < model.n_items:
        raise UnknownItemError(f"item {i} outside the catalog", stage="embed")
    return model.item_embeddings[i].copy()


def config_fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]
