"""Single-layer LSTM next-item model with masked padding."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches, next_item_examples


class LSTMNet(Network):
    kind = "rnn"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        d, h = cfg.embed_dim, cfg.hidden
        bias = np.zeros(4 * h)
        bias[h : 2 * h] = 1.0  # forget gate starts open
        self.params = {
            "item_emb": ad.glorot(rng, (n_items + 1, d), "item_emb"),
            "w_x": ad.glorot(rng, (d, 4 * h), "w_x"),
            "w_h": ad.glorot(rng, (h, 4 * h), "w_h"),
            "b": ad.Tensor(bias, requires_grad=True, name="b"),
            "proj_w": ad.glorot(rng, (h, d), "proj_w"),
            "out_emb": ad.glorot(rng, (n_items, d), "out_emb"),
            "out_b": ad.zeros((n_items,), "out_b"),
        }

    def embedding_tables(self):
        return ["item_emb", "out_emb", "out_b"]

    def final_state(self, ctx):
        """Hidden state after the last real item of each row; pads leave it untouched."""
        p = self.params
        xw = ad.matmul(ad.take(p["item_emb"], ctx), p["w_x"])  # (B, L, 4H)
        return ad.lstm(xw, p["w_h"], p["b"], ctx != self.pad)

    def _logits(self, ctx, training, rng=None):
        h = ad.dropout(self.final_state(ctx), self.cfg.dropout, training, rng)
        p = self.params
        q = ad.matmul(h, p["proj_w"])  # hidden -> embedding space
        return ad.add(ad.matmul(q, ad.transpose(p["out_emb"])), p["out_b"])

    def prepare(self, sessions, rng):
        return next_item_examples(sessions, self.cfg.max_len, self.pad)

    def batches(self, store, rng):
        ctx, lengths, targets = store
        for idx in minibatches(len(targets), self.cfg.batch, rng):
            yield ctx[idx], targets[idx]

    def loss(self, batch, rng):
        ctx, targets = batch
        logits = self._logits(ctx, True, rng)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets] = 1.0
        return ad.softmax_cross_entropy(logits, onehot)

    def score(self, ctx, lengths):
        return self._logits(ctx, False).data

    def item_embeddings(self):
        # output item table of the factorized softmax head
        return self.params["out_emb"].data.copy()
