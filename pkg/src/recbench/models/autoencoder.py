"""Symmetric denoising autoencoder over session multi-hot vectors."""

import numpy as np

from .. import autodiff as ad
from .base import Network, minibatches


class AutoencoderNet(Network):
    kind = "autoencoder"

    def __init__(self, cfg, n_items, rng, graph=None):
        super().__init__(cfg, n_items, rng, graph)
        n, h, z = n_items, cfg.hidden, cfg.bottleneck
        self.params = {
            "enc1_w": ad.glorot(rng, (n, h), "enc1_w"),
            "enc1_b": ad.zeros((h,), "enc1_b"),
            "enc2_w": ad.glorot(rng, (h, z), "enc2_w"),
            "enc2_b": ad.zeros((z,), "enc2_b"),
            "dec1_w": ad.glorot(rng, (z, h), "dec1_w"),
            "dec1_b": ad.zeros((h,), "dec1_b"),
            "dec2_w": ad.glorot(rng, (h, n), "dec2_w"),
            "dec2_b": ad.zeros((n,), "dec2_b"),
        }

    @property
    def layer_widths(self):
        p = self.params
        enc = [p["enc1_w"].shape[0], p["enc1_w"].shape[1], p["enc2_w"].shape[1]]
        dec = [p["dec1_w"].shape[0], p["dec1_w"].shape[1], p["dec2_w"].shape[1]]
        return enc, dec

    def encode(self, x):
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p["enc1_w"]), p["enc1_b"]))
        return ad.add(ad.matmul(h, p["enc2_w"]), p["enc2_b"])

    def decode_logits(self, z):
        p = self.params
        h = ad.relu(ad.add(ad.matmul(z, p["dec1_w"]), p["dec1_b"]))
        return ad.add(ad.matmul(h, p["dec2_w"]), p["dec2_b"])

    def multi_hot(self, ctx):
        x = np.zeros((len(ctx), self.n_items + 1))
        x[np.arange(len(ctx))[:, None], ctx] = 1.0
        return x[:, : self.n_items]

    def prepare(self, sessions, rng):
        x = np.zeros((len(sessions), self.n_items))
        for r, s in enumerate(sessions):
            x[r, list(s.items)] = 1.0
        return x

    def batches(self, store, rng):
        for idx in minibatches(len(store), self.cfg.batch, rng):
            yield store[idx]

    def loss(self, batch, rng):
        keep = rng.random(batch.shape) >= self.cfg.mask_rate
        logits = self.decode_logits(self.encode(ad.Tensor(batch * keep)))
        return ad.bce_with_logits(logits, batch)

    def score(self, ctx, lengths):
        logits = self.decode_logits(self.encode(ad.Tensor(self.multi_hot(ctx)))).data
        return ad.sigmoid(logits).data

    def item_embeddings(self):
        return self.encode(ad.Tensor(np.eye(self.n_items))).data.copy()
