"""Item-graph propagation model.

Item embeddings are smoothed over the co-occurrence graph by rounds of
weighted-mean aggregation; a context is the mean of its items' propagated
embeddings. Logits are a scaled cosine between context and candidate plus a
per-item bias.
"""

import numpy as np

from .. import autodiff as ad
from .base import Network, next_item_examples

COSINE_SCALE = 5.0


def propagation_matrix(graph, n_items: int) -> np.ndarray:
    """Row-stochastic (I + W) / (1 + rowsum W): self-loop weight 1 plus edge weights."""
    w = graph.weight_matrix(n_items) if graph is not None else np.zeros((n_items, n_items))
    w = w + np.eye(n_items)
    return w / w.sum(axis=1, keepdims=True)


def _unit(x, eps: float = 1e-12):
    """Row normalization matching ``autodiff.l2_normalize``."""
    return x / np.sqrt((x * x).sum(axis=-1, keepdims=True) + eps)


class GNNNet(Network):
    kind = "gnn"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        self.params = {
            "item_emb": ad.glorot(rng, (n_items, cfg.embed_dim), "item_emb"),
            "item_bias": ad.zeros((n_items,), "item_bias"),
        }
        self.set_graph(graph)

    def set_graph(self, graph):
        self.graph = graph
        self.prop = propagation_matrix(graph, self.n_items)

    def embedding_tables(self):
        return ["item_emb", "item_bias"]

    def propagate(self):
        """Mean of the base embeddings and each aggregation round's output."""
        z = self.params["item_emb"]
        total = z
        for _ in range(self.cfg.layers):
            z = ad.matmul(ad.Tensor(self.prop), z)
            total = ad.add(total, z)
        return ad.mul(total, 1.0 / (self.cfg.layers + 1))

    @staticmethod
    def _context_means(ctx, lengths, n_items):
        rows = np.repeat(np.arange(len(ctx)), ctx.shape[1])
        cols = ctx.reshape(-1)
        keep = cols < n_items
        avg = np.zeros((len(ctx), n_items))
        np.add.at(avg, (rows[keep], cols[keep]), 1.0)
        return avg / np.maximum(lengths, 1)[:, None]

    def prepare(self, sessions, rng):
        ctx, lengths, targets = next_item_examples(sessions, self.cfg.max_len, self.pad)
        return self._context_means(ctx, lengths, self.n_items), targets

    def batches(self, store, rng):
        avg, targets = store
        k = self.cfg.neg_samples
        negatives = rng.integers(self.n_items, size=(len(targets), k))
        yield avg, targets, negatives  # one full-batch step per epoch

    def loss(self, batch, rng):
        avg, targets, negatives = batch
        z = self.propagate()
        c = ad.l2_normalize(ad.matmul(ad.Tensor(avg), z))  # (N, D)
        cand = np.concatenate([targets[:, None], negatives], axis=1)  # (N, 1 + k)
        zc = ad.take(ad.l2_normalize(z), cand)  # (N, 1 + k, D)
        cos = ad.tsum(ad.mul(ad.reshape(c, (len(targets), 1, -1)), zc), axis=-1)
        logits = ad.add(ad.mul(cos, COSINE_SCALE), ad.take(self.params["item_bias"], cand))
        labels = np.zeros(cand.shape)
        labels[:, 0] = 1.0
        return ad.bce_with_logits(logits, labels)

    def score(self, ctx, lengths):
        z = _unit(self.propagate().data)
        c = _unit(self._context_means(ctx, lengths, self.n_items) @ z)
        return COSINE_SCALE * (c @ z.T) + self.params["item_bias"].data

    def item_embeddings(self):
        return self.propagate().data.copy()
