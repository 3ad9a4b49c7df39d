"""Shared-weight pair encoder trained with a margin contrastive loss."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches


class SiameseNet(Network):
    kind = "siamese"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        d = cfg.embed_dim
        self.params = {
            "item_emb": ad.glorot(rng, (n_items, d), "item_emb"),
            "enc_w": ad.glorot(rng, (d, d), "enc_w"),
            "enc_b": ad.zeros((d,), "enc_b"),
        }

    def embedding_tables(self):
        return ["item_emb"]

    def encode(self, idx):
        p = self.params
        h = ad.tanh(ad.add(ad.matmul(ad.take(p["item_emb"], idx), p["enc_w"]), p["enc_b"]))
        return ad.l2_normalize(h)

    def prepare(self, sessions, rng):
        g = self.graph
        pos = np.stack([g.src, g.dst], axis=1) if g is not None and g.n_edges else np.zeros((0, 2), dtype=np.int64)
        prob = g.weights / g.weights.sum() if len(pos) else np.zeros(0)
        codes = np.unique(pos[:, 0] * self.n_items + pos[:, 1])
        return pos, prob, codes

    def _negatives(self, count, codes, rng):
        """Uniform item pairs without a co-occurrence edge (best effort on dense graphs)."""
        out = np.empty((0, 2), dtype=np.int64)
        for _ in range(20):
            cand = rng.integers(self.n_items, size=(2 * count + 8, 2))
            lo, hi = cand.min(axis=1), cand.max(axis=1)
            ok = (lo != hi) & ~np.isin(lo * self.n_items + hi, codes)
            out = np.concatenate([out, cand[ok]])
            if len(out) >= count:
                return out[:count]
        extra = rng.integers(self.n_items, size=(count - len(out), 2))
        return np.concatenate([out, extra])

    def batches(self, store, rng):
        pos, prob, codes = store
        n = len(pos)
        if n == 0:
            return
        chosen = pos[rng.choice(n, size=n, p=prob)]
        neg = self._negatives(n * self.cfg.neg_samples, codes, rng)
        pairs = np.concatenate([chosen, neg])
        labels = np.r_[np.ones(len(chosen)), np.zeros(len(neg))]
        for idx in minibatches(len(pairs), self.cfg.batch, rng):
            yield pairs[idx], labels[idx]

    def loss(self, batch, rng):
        pairs, labels = batch
        ua, ub = self.encode(pairs[:, 0]), self.encode(pairs[:, 1])
        dist = ad.sub(1.0, ad.tsum(ad.mul(ua, ub), axis=-1))  # cosine distance
        pull = ad.mul(ad.mul(dist, dist), labels)
        push = ad.mul(ad.hinge_sq(ad.sub(self.cfg.margin, dist)), 1.0 - labels)
        return ad.mean(ad.add(pull, push))

    def score(self, ctx, lengths):
        anchors = ctx[np.arange(len(ctx)), np.maximum(lengths - 1, 0)]
        u = self.encode(np.arange(self.n_items)).data
        return u[anchors] @ u.T

    def item_embeddings(self):
        return self.encode(np.arange(self.n_items)).data.copy()
