"""Convolutional next-item model over the embedded context matrix."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches, next_item_examples


class CNNNet(Network):
    kind = "cnn"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        d, c, k, p = cfg.embed_dim, cfg.channels, cfg.kernel, cfg.pool
        self.out_h = (cfg.max_len - k + 1) // p
        self.out_w = (d - k + 1) // p
        self.params = {
            "item_emb": ad.glorot(rng, (n_items + 1, d), "item_emb"),
            "kernels": ad.glorot(rng, (k, k, 1, c), "kernels"),
            "conv_bias": ad.zeros((c,), "conv_bias"),
            "out_w": ad.glorot(rng, (self.out_h * self.out_w * c, n_items), "out_w"),
            "out_b": ad.zeros((n_items,), "out_b"),
        }

    def embedding_tables(self):
        return ["item_emb"]

    def _logits(self, ctx, lengths, training, rng=None):
        p = self.params
        mask = (ctx != self.pad).astype(np.float64)[:, :, None]
        x = ad.mul(ad.take(p["item_emb"], ctx), mask)
        b, length, d = x.shape
        x = ad.reshape(x, (b, length, d, 1))
        h = ad.conv2d_maxpool(x, p["kernels"], 1, (self.cfg.pool, self.cfg.pool))
        h = ad.relu(ad.add(h, p["conv_bias"]))
        h = ad.dropout(h, self.cfg.dropout, training, rng)
        h = ad.reshape(h, (b, -1))
        return ad.add(ad.matmul(h, p["out_w"]), p["out_b"])

    def prepare(self, sessions, rng):
        return next_item_examples(sessions, self.cfg.max_len, self.pad)

    def batches(self, store, rng):
        ctx, lengths, targets = store
        for idx in minibatches(len(targets), self.cfg.batch, rng):
            yield ctx[idx], lengths[idx], targets[idx]

    def loss(self, batch, rng):
        ctx, lengths, targets = batch
        logits = self._logits(ctx, lengths, True, rng)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets] = 1.0
        return ad.softmax_cross_entropy(logits, onehot)

    def score(self, ctx, lengths):
        return self._logits(ctx, lengths, False).data

    def item_embeddings(self):
        return self.params["item_emb"].data[: self.n_items].copy()
