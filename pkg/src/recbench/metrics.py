"""Accuracy, precision/recall/F1, accuracy@k and intra-list diversity."""

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import EmptyUniverseError, ListTooShortError, UniverseTooSmallError


class ZeroVectorsWarning(RuntimeWarning):
    """Similarity requested between two all-zero vectors (defined as 0.5)."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def universe(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class RankedList:
    """Items in recommendation order with their scores."""

    items: tuple
    scores: tuple

    def __post_init__(self):
        if len(self.items) != len(self.scores):
            raise ValueError("items and scores differ in length")
        if len(set(self.items)) != len(self.items):
            raise ValueError("duplicate items in ranked list")
        for (i, s), (j, t) in zip(zip(self.items, self.scores), zip(self.items[1:], self.scores[1:])):
            if s < t or (s == t and i > j):
                raise ValueError("ranked list is not ordered by (-score, item)")

    def __len__(self):
        return len(self.items)

    def top(self, k: int) -> tuple:
        return self.items[:k]

    @classmethod
    def from_scores(cls, scores, k: int, exclude=()):
        """Top-``k`` of a dense score vector, ties broken by ascending index."""
        scores = np.asarray(scores, dtype=np.float64)
        order = np.lexsort((np.arange(len(scores)), -scores))
        if len(exclude):
            banned = np.zeros(len(scores), dtype=bool)
            banned[list(exclude)] = True
            order = order[~banned[order]]
        order = order[:k]
        return cls(tuple(int(i) for i in order), tuple(float(s) for s in scores[order]))


@dataclass(frozen=True)
class EvalRow:
    k: int
    accuracy_at_k: float
    ild_at_k: float


def _items(ranked):
    return ranked.items if isinstance(ranked, RankedList) else tuple(ranked)


def confusion_counts(topk, relevant, universe: int) -> ConfusionCounts:
    topk, relevant = set(topk), set(relevant)
    tp = len(topk & relevant)
    fp = len(topk - relevant)
    fn = len(relevant - topk)
    tn = universe - tp - fp - fn
    if tn < 0:
        raise UniverseTooSmallError(f"universe {universe} smaller than |topk ∪ relevant|", stage="metrics")
    return ConfusionCounts(tp, tn, fp, fn)


def accuracy(c: ConfusionCounts) -> float:
    if c.universe == 0:
        raise EmptyUniverseError("accuracy over an empty universe", stage="metrics")
    return (c.tp + c.tn) / c.universe


def precision(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0


def recall(c: ConfusionCounts) -> float:
    return c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0


def f1(c: ConfusionCounts) -> float:
    p, r = precision(c), recall(c)
    return 2.0 * p * r / (p + r) if p + r else 0.0


def accuracy_at_k(ranked, relevant, k: int) -> float:
    """Share of the first ``k`` recommendations that are relevant."""
    items = _items(ranked)
    if k < 1 or len(items) < k:
        raise ListTooShortError(f"need {k} ranked items, have {len(items)}", stage="metrics")
    relevant = set(relevant)
    return sum(1 for i in items[:k] if i in relevant) / k


def item_similarity(a, b) -> float:
    """Cosine similarity shifted into [0, 1]: (1 + cos) / 2."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("vectors differ in length")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        if na == 0.0 and nb == 0.0:
            warnings.warn("similarity of two zero vectors", ZeroVectorsWarning, stacklevel=2)
        return 0.5
    cos = float(np.clip(a @ b / (na * nb), -1.0, 1.0))
    return (1.0 + cos) / 2.0


def ild_at_k(ranked, k: int, embeddings) -> float:
    """One minus the mean pairwise similarity over the first ``k`` items; 0 for k = 1.

    ``embeddings`` is an (n_items, d) array indexed by item.
    """
    items = _items(ranked)
    if k < 1 or len(items) < k:
        raise ListTooShortError(f"need {k} ranked items, have {len(items)}", stage="metrics")
    if k == 1:
        return 0.0
    emb = np.asarray(embeddings, dtype=np.float64)[list(items[:k])]
    norms = np.linalg.norm(emb, axis=1)
    unit = emb / np.where(norms > 0, norms, 1.0)[:, None]
    sim = (1.0 + np.clip(unit @ unit.T, -1.0, 1.0)) / 2.0
    total = sim.sum() - np.trace(sim)
    return float(1.0 - total / (k * (k - 1)))


def ild_curve(ranked, embeddings, k_max: int) -> np.ndarray:
    """ILD@k for k = 1..k_max in one pass (uses the compiled kernel when enabled)."""
    items = _items(ranked)
    if len(items) < k_max:
        raise ListTooShortError(f"need {k_max} ranked items, have {len(items)}", stage="metrics")
    emb = np.asarray(embeddings, dtype=np.float64)[list(items[:k_max])]
    return _kernels.ild_curve(emb)
