"""Cleaning, text normalization, encoding, scaling and feature reduction."""

import hashlib
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .errors import InvalidDimError, NonFiniteInputError
from .ingest import ItemRecord, Session, SplitDataset, sessionize, split_chronological

log = logging.getLogger(__name__)

_NON_WORD = re.compile(r"[\W_]+")


# ------------------------------------------------------------------- cleaning


def _missing(v) -> bool:
    return v is None or (isinstance(v, str) and not v.strip())


def clean(events, items, report: dict | None = None):
    """Drop incomplete rows, impute item features and remove duplicate records.

    Numeric gaps take the column median (0.0 when a column has no values at
    all); missing categories take the most common category. Exact duplicate
    events and repeated item ids keep their first occurrence.
    """
    report = {} if report is None else report
    kept, seen = [], set()
    dropped = dups = 0
    for e in events:
        if _missing(e.user_id) or _missing(e.item_id):
            dropped += 1
            continue
        key = (e.user_id, e.item_id, e.event_kind, e.timestamp)
        if key in seen:
            dups += 1
            continue
        seen.add(key)
        kept.append(e)

    by_id: dict = {}
    for it in items:
        if _missing(it.item_id):
            dropped += 1
        elif it.item_id in by_id:
            dups += 1
        else:
            by_id[it.item_id] = it
    catalog = list(by_id.values())

    width = max((len(it.numeric_features) for it in catalog), default=0)
    mat = np.full((len(catalog), width), np.nan)
    for r, it in enumerate(catalog):
        mat[r, : len(it.numeric_features)] = it.numeric_features
    imputed = 0
    for c in range(width):
        col = mat[:, c]
        gaps = np.isnan(col)
        if gaps.any():
            med = float(np.median(col[~gaps])) if (~gaps).any() else 0.0
            col[gaps] = med
            imputed += int(gaps.sum())

    cats = Counter(it.category for it in catalog if not _missing(it.category))
    mode = min(cats.items(), key=lambda kv: (-kv[1], kv[0]))[0] if cats else "unknown"
    cat_imputed = 0
    cleaned = []
    for r, it in enumerate(catalog):
        cat = it.category
        if _missing(cat):
            cat, cat_imputed = mode, cat_imputed + 1
        cleaned.append(replace(it, category=cat, numeric_features=mat[r].tolist()))

    report.update(
        rows_dropped=report.get("rows_dropped", 0) + dropped,
        duplicates_removed=report.get("duplicates_removed", 0) + dups,
        numeric_imputed=imputed,
        categories_imputed=cat_imputed,
    )
    return kept, cleaned


# ----------------------------------------------------------------------- text


def normalize_text(s: str, stemmer: Callable[[str], str] | None = None) -> str:
    """Lowercase, turn punctuation and symbols into spaces, collapse whitespace."""
    tokens = _NON_WORD.sub(" ", s.lower()).split()
    if stemmer is not None:
        tokens = [stemmer(t) for t in tokens]
    return " ".join(tokens)


def tokenize(s: str, stemmer=None) -> list[str]:
    return normalize_text(s, stemmer).split()


# ------------------------------------------------------------------- encoding


def encode_categoricals(items):
    """Label-encode categories in lexicographic order; returns (mapping, codes)."""
    mapping = {c: i for i, c in enumerate(sorted({it.category for it in items}))}
    return mapping, [mapping[it.category] for it in items]


def one_hot(codes, n_classes: int) -> np.ndarray:
    out = np.zeros((len(codes), n_classes))
    out[np.arange(len(codes)), codes] = 1.0
    return out


# -------------------------------------------------------------------- scaling


def scale_numeric(matrix, bounds=None) -> np.ndarray:
    """Per-column min-max scaling to [0, 1]; constant columns become 0.

    ``bounds`` = (col_min, col_max) applies previously fitted parameters
    instead, clipping values outside the fitted range.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NonFiniteInputError("matrix contains NaN or Inf", stage="preprocess")
    if x.size == 0:
        return x.copy()
    lo, hi = (x.min(axis=0), x.max(axis=0)) if bounds is None else bounds
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    out = np.where(span > 0, (x - lo) / safe, 0.0)
    return np.clip(out, 0.0, 1.0)


# ------------------------------------------------------------------------ PCA


def variance_filter(matrix) -> np.ndarray:
    """Boolean mask of columns with non-zero variance."""
    x = np.asarray(matrix, dtype=np.float64)
    return x.max(axis=0) > x.min(axis=0) if len(x) else np.zeros(x.shape[1], dtype=bool)


def principal_directions(centered, k: int, tol: float = 1e-14, max_iter: int = 200_000):
    """Top-``k`` covariance eigenpairs by projected power iteration.

    Each direction is iterated against the covariance while being kept
    orthogonal to those already found. Returns (directions k x d, variances).
    """
    x = np.asarray(centered, dtype=np.float64)
    n, d = x.shape
    cov = x.T @ x / max(n - 1, 1)
    rng = np.random.default_rng(0)
    comps = np.zeros((k, d))
    variances = np.zeros(k)
    for c in range(k):
        v = rng.standard_normal(d)
        for _ in range(2):
            v -= comps[:c].T @ (comps[:c] @ v)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = cov @ v
            for _ in range(2):
                w -= comps[:c].T @ (comps[:c] @ w)
            norm = np.linalg.norm(w)
            if norm < 1e-300:
                break  # remaining spectrum is zero; any orthogonal v will do
            w /= norm
            if w @ v < 0:
                w = -w
            done = np.linalg.norm(w - v) < tol
            v = w
            if done:
                break
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[c] = v
        variances[c] = float(v @ cov @ v)
    return comps, variances


def reduce_dimensions(matrix, target_dim: int, return_info: bool = False):
    """Drop zero-variance columns, then project onto the top principal directions.

    Output columns are ordered by decreasing explained variance. With
    ``return_info`` also returns a dict with the kept-column mask, the
    directions and the explained-variance ratios.
    """
    x = np.asarray(matrix, dtype=np.float64)
    if not 1 <= target_dim <= x.shape[1]:
        raise InvalidDimError(f"target_dim must be in [1, {x.shape[1]}]", stage="preprocess")
    keep = variance_filter(x)
    kept = x[:, keep]
    if target_dim > kept.shape[1]:
        raise InvalidDimError(f"only {kept.shape[1]} columns have non-zero variance", stage="preprocess")
    centered = kept - kept.mean(axis=0)
    comps, variances = principal_directions(centered, target_dim)
    projected = centered @ comps.T
    if not return_info:
        return projected
    total = float(np.trace(centered.T @ centered) / max(len(x) - 1, 1))
    ratios = (variances / total if total > 0 else np.zeros_like(variances)).tolist()
    return projected, {"kept_columns": keep, "directions": comps, "explained_variance_ratio": ratios}


# ------------------------------------------------------------------- pipeline


@dataclass
class PipelineConfig:
    gap_seconds: int = 1800
    split_ratio: float = 0.7
    reduce_dim: int | None = None
    one_hot_max: int = 16
    stemmer: Callable[[str], str] | None = None


@dataclass
class PreprocessedData:
    items: list[ItemRecord]
    sessions: list[Session]
    item_index_map: dict
    category_index_map: dict
    feature_matrix: np.ndarray
    item_category: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    split: SplitDataset | None = None
    report: dict = field(default_factory=dict)

    @property
    def n_items(self) -> int:
        return len(self.items)

    @property
    def n_categories(self) -> int:
        return len(self.category_index_map)

    def with_sessions(self, sessions) -> "PreprocessedData":
        return replace(self, sessions=list(sessions))

    def train_view(self) -> "PreprocessedData":
        """Same catalog, with ``sessions`` restricted to the training side."""
        return self.with_sessions(self.split.train if self.split is not None else self.sessions)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(json.dumps(sorted(self.item_index_map.items()), sort_keys=True).encode())
        h.update(json.dumps(sorted(self.category_index_map.items())).encode())
        h.update(np.ascontiguousarray(self.feature_matrix).tobytes())
        h.update(np.ascontiguousarray(self.item_category).tobytes())
        for s in self.sessions:
            h.update(repr((s.session_id, s.user_id, s.items, s.start_ts, s.end_ts)).encode())
        return h.hexdigest()


def _reindex(session: Session, index: dict) -> Session:
    return replace(
        session,
        items=tuple(index[i] for i in session.items),
        raw=tuple((index[i], ts) for i, ts in session.raw),
    )


def run_pipeline(events, items, config: PipelineConfig | None = None) -> PreprocessedData:
    """Clean, normalize, encode, scale and optionally reduce; then sessionize, index and split."""
    config = config or PipelineConfig()
    report: dict = {"malformed_rows": getattr(events, "skip_count", 0)}

    known = {it.item_id for it in items}
    referenced = []
    for e in events:
        if not _missing(e.item_id) and e.item_id not in known:
            known.add(e.item_id)
            referenced.append(ItemRecord(e.item_id, None, [], []))
    report["items_added_from_events"] = len(referenced)

    events, catalog = clean(events, list(items) + referenced, report)
    catalog = sorted(catalog, key=lambda it: str(it.item_id))
    catalog = [replace(it, text_fields=[normalize_text(t, config.stemmer) for t in it.text_fields]) for it in catalog]

    cat_map, codes = encode_categoricals(catalog)
    width = max((len(it.numeric_features) for it in catalog), default=0)
    numeric = np.array([it.numeric_features + [0.0] * (width - len(it.numeric_features)) for it in catalog]).reshape(len(catalog), width)
    names = [f"num{j}" for j in range(width)]
    blocks = [scale_numeric(numeric)]
    if 1 < len(cat_map) <= config.one_hot_max:
        blocks.append(one_hot(codes, len(cat_map)))
        names += [f"cat={c}" for c in sorted(cat_map)]
    features = np.hstack(blocks) if blocks else np.zeros((len(catalog), 0))

    keep = variance_filter(features)
    report["columns_dropped"] = [n for n, k in zip(names, keep) if not k]
    features, names = features[:, keep], [n for n, k in zip(names, keep) if k]
    report["explained_variance_ratio"] = None
    if config.reduce_dim is not None:
        features, info = reduce_dimensions(features, config.reduce_dim, return_info=True)
        features = scale_numeric(features)
        names = [f"pc{j}" for j in range(features.shape[1])]
        report["explained_variance_ratio"] = info["explained_variance_ratio"]

    index = {it.item_id: i for i, it in enumerate(catalog)}
    sessions = [_reindex(s, index) for s in sessionize(events, config.gap_seconds)]
    split = split_chronological(sessions, config.split_ratio) if sessions else None
    report.update(n_events=len(events), n_items=len(catalog), n_sessions=len(sessions), n_features=len(names))
    log.info("pipeline: %s", json.dumps(report, sort_keys=True))
    return PreprocessedData(
        items=catalog,
        sessions=sessions,
        item_index_map=index,
        category_index_map=cat_map,
        feature_matrix=np.ascontiguousarray(features, dtype=np.float64),
        item_category=np.asarray(codes, dtype=np.int64),
        feature_names=names,
        split=split,
        report=report,
    )


def check_preprocessed(data: PreprocessedData) -> list[str]:
    """Invariant scan; returns a list of violations (empty when healthy)."""
    problems = []
    if sorted(data.item_index_map.values()) != list(range(data.n_items)):
        problems.append("item indices are not contiguous")
    fm = data.feature_matrix
    if fm.size and (not np.all(np.isfinite(fm)) or fm.min() < 0.0 or fm.max() > 1.0):
        problems.append("feature values outside [0, 1] or missing")
    if any(_missing(it.category) for it in data.items):
        problems.append("item without category")
    if any(math.isnan(v) for it in data.items for v in it.numeric_features):
        problems.append("missing numeric feature")
    return problems
