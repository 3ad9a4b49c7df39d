"""Neural collaborative filtering: GMF and MLP branches over a context vector."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches, next_item_examples


class NCFNet(Network):
    kind = "ncf"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        d, h = cfg.embed_dim, cfg.hidden
        self.params = {
            "ctx_emb": ad.glorot(rng, (n_items + 1, d), "ctx_emb"),
            "item_emb": ad.glorot(rng, (n_items, d), "item_emb"),
            "mlp1_w": ad.glorot(rng, (2 * d, h), "mlp1_w"),
            "mlp1_b": ad.zeros((h,), "mlp1_b"),
            "mlp2_w": ad.glorot(rng, (h, h // 2), "mlp2_w"),
            "mlp2_b": ad.zeros((h // 2,), "mlp2_b"),
            "out_w": ad.glorot(rng, (d + h // 2, 1), "out_w"),
            "out_b": ad.zeros((1,), "out_b"),
        }

    def embedding_tables(self):
        return ["ctx_emb", "item_emb"]

    def context_vector(self, ctx, lengths):
        mask = (ctx != self.pad).astype(np.float64)[:, :, None]
        summed = ad.tsum(ad.mul(ad.take(self.params["ctx_emb"], ctx), mask), axis=1)
        return ad.mul(summed, 1.0 / np.maximum(lengths, 1)[:, None])

    def branches(self, c, q):
        """GMF and MLP branch vectors for context rows ``c`` against candidate rows ``q``."""
        p = self.params
        gmf = ad.mul(c, q)
        h = ad.relu(ad.add(ad.matmul(ad.concat([c, q], axis=-1), p["mlp1_w"]), p["mlp1_b"]))
        mlp = ad.relu(ad.add(ad.matmul(h, p["mlp2_w"]), p["mlp2_b"]))
        return gmf, mlp

    def head(self, gmf, mlp):
        p = self.params
        return ad.add(ad.matmul(ad.concat([gmf, mlp], axis=-1), p["out_w"]), p["out_b"])

    def prepare(self, sessions, rng):
        return next_item_examples(sessions, self.cfg.max_len, self.pad)

    def batches(self, store, rng):
        ctx, lengths, targets = store
        k = self.cfg.neg_samples
        n = len(targets)
        rows = np.repeat(np.arange(n), 1 + k)
        cand = np.concatenate([targets[:, None], rng.integers(self.n_items, size=(n, k))], axis=1).reshape(-1)
        labels = np.tile(np.r_[1.0, np.zeros(k)], n)
        for idx in minibatches(len(rows), self.cfg.batch, rng):
            r = rows[idx]
            yield ctx[r], lengths[r], cand[idx], labels[idx]

    def loss(self, batch, rng):
        ctx, lengths, cand, labels = batch
        c = self.context_vector(ctx, lengths)
        q = ad.take(self.params["item_emb"], cand)
        logits = ad.reshape(self.head(*self.branches(c, q)), (-1,))
        return ad.bce_with_logits(logits, labels)

    def score(self, ctx, lengths):
        c = self.context_vector(ctx, lengths).data
        q = self.params["item_emb"].data
        out = np.empty((len(ctx), self.n_items))
        for r in range(len(ctx)):
            cr = ad.Tensor(np.broadcast_to(c[r], q.shape))
            out[r] = self.head(*self.branches(cr, ad.Tensor(q))).data[:, 0]
        return out

    def item_embeddings(self):
        return self.params["item_emb"].data.copy()
