"""One-block self-attention encoder with sinusoidal positions and masked mean pooling."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches, next_item_examples

MASK_BIAS = -1e9


def sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    rate = 1.0 / 10000.0 ** (2 * (np.arange(dim) // 2) / dim)
    ang = pos * rate[None, :]
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(ang[:, 0::2])
    out[:, 1::2] = np.cos(ang[:, 1::2])
    return out


class TransformerNet(Network):
    kind = "transformer"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        d, f = cfg.embed_dim, cfg.hidden
        self.use_positional = True
        self.positions = sinusoidal_positions(cfg.max_len, d)
        self.params = {
            "item_emb": ad.glorot(rng, (n_items + 1, d), "item_emb"),
            "w_q": ad.glorot(rng, (d, d), "w_q"),
            "w_k": ad.glorot(rng, (d, d), "w_k"),
            "w_v": ad.glorot(rng, (d, d), "w_v"),
            "w_o": ad.glorot(rng, (d, d), "w_o"),
            "ln1_g": ad.ones((d,), "ln1_g"),
            "ln1_b": ad.zeros((d,), "ln1_b"),
            "ff1_w": ad.glorot(rng, (d, f), "ff1_w"),
            "ff1_b": ad.zeros((f,), "ff1_b"),
            "ff2_w": ad.glorot(rng, (f, d), "ff2_w"),
            "ff2_b": ad.zeros((d,), "ff2_b"),
            "ln2_g": ad.ones((d,), "ln2_g"),
            "ln2_b": ad.zeros((d,), "ln2_b"),
            "out_emb": ad.glorot(rng, (n_items, d), "out_emb"),
            "out_b": ad.zeros((n_items,), "out_b"),
        }

    def embedding_tables(self):
        return ["item_emb", "out_emb", "out_b"]

    def _split_heads(self, x, b, length):
        h = self.cfg.heads
        return ad.transpose(ad.reshape(x, (b, length, h, -1)), (0, 2, 1, 3))

    def encode(self, ctx, return_attention=False):
        """Per-position outputs (B, L, D) and, optionally, attention weights (B, H, L, L)."""
        p = self.params
        b, length = ctx.shape
        d = self.cfg.embed_dim
        x = ad.mul(ad.take(p["item_emb"], ctx), np.sqrt(d))
        if self.use_positional:
            x = ad.add(x, self.positions[:length])
        q = self._split_heads(ad.matmul(x, p["w_q"]), b, length)
        k = self._split_heads(ad.matmul(x, p["w_k"]), b, length)
        v = self._split_heads(ad.matmul(x, p["w_v"]), b, length)
        bias = np.where(ctx == self.pad, MASK_BIAS, 0.0)[:, None, None, :]
        logits = ad.add(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d // self.cfg.heads)), bias)
        att = ad.softmax(logits, axis=-1)
        mixed = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (b, length, d))
        h = ad.layer_norm(ad.add(x, ad.matmul(mixed, p["w_o"])), p["ln1_g"], p["ln1_b"])
        ff = ad.relu(ad.add(ad.matmul(h, p["ff1_w"]), p["ff1_b"]))
        ff = ad.add(ad.matmul(ff, p["ff2_w"]), p["ff2_b"])
        out = ad.layer_norm(ad.add(h, ff), p["ln2_g"], p["ln2_b"])
        return (out, att.data) if return_attention else out

    def pooled(self, ctx, lengths):
        mask = (ctx != self.pad).astype(np.float64)[:, :, None]
        summed = ad.tsum(ad.mul(self.encode(ctx), mask), axis=1)
        return ad.mul(summed, 1.0 / np.maximum(lengths, 1)[:, None])

    def _logits(self, ctx, lengths):
        return ad.add(ad.matmul(self.pooled(ctx, lengths), ad.transpose(self.params["out_emb"])), self.params["out_b"])

    def prepare(self, sessions, rng):
        return next_item_examples(sessions, self.cfg.max_len, self.pad)

    def batches(self, store, rng):
        ctx, lengths, targets = store
        for idx in minibatches(len(targets), self.cfg.batch, rng):
            yield ctx[idx], lengths[idx], targets[idx]

    def loss(self, batch, rng):
        ctx, lengths, targets = batch
        logits = self._logits(ctx, lengths)
        onehot = np.zeros(logits.shape)
        onehot[np.arange(len(targets)), targets] = 1.0
        return ad.softmax_cross_entropy(logits, onehot)

    def score(self, ctx, lengths):
        return self._logits(ctx, lengths).data

    def item_embeddings(self):
        # the output table is what the softmax compares items with, so it is
        # the representation that reflects co-occurrence most directly
        return self.params["out_emb"].data.copy()
