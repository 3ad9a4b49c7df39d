"""Experiment orchestration: queries, k-sweep evaluation, baselines and reports."""

import csv
import io
import json
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .errors import InvalidConfigError, NoUsableQueriesError, RecBenchError, ReportIOError
from .graph import build_split_graphs, save_graph
from .ingest import (
    RATINGS_SCHEMA,
    RETAIL_ROCKET_SCHEMA,
    EventSchema,
    generate_synthetic,
    load_events,
    load_items,
    load_synthetic,
    sessions_to_events,
)
from .models import KINDS, ModelConfig, RecContext, fit, score_contexts
from .models.base import config_fingerprint
from .preprocess import PipelineConfig, one_hot, run_pipeline

log = logging.getLogger(__name__)

CSV_HEADER = ["model", "k", "accuracy_pct", "ild_pct"]
BASELINES = ("popularity", "random")


# --------------------------------------------------------------------- config


@dataclass
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"synthetic": {}})
    models: list = field(default_factory=lambda: list(KINDS))
    k_max: int = 10
    K_eval: int = 10
    holdout_fraction: float = 0.3
    seed: int = 1
    output_dir: str | None = None
    gap_seconds: int = 1800
    split_ratio: float = 0.7
    reduce_dim: int | None = None
    max_len: int = 10
    ild_reference: str | None = None
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config keys {sorted(unknown)}", stage="config")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.k_max < 1 or self.K_eval < 1:
            raise InvalidConfigError("k_max and K_eval must be >= 1", stage="config")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise InvalidConfigError("holdout_fraction must lie in (0, 1)", stage="config")
        if not self.models:
            raise InvalidConfigError("at least one model is required", stage="config")
        for spec in self.models:
            self.model_config(spec)

    def model_config(self, spec) -> ModelConfig:
        spec = {"kind": spec} if isinstance(spec, str) else dict(spec)
        kind = spec.pop("kind", None)
        spec.pop("name", None)
        spec.setdefault("seed", self.seed)
        spec.setdefault("max_len", self.max_len)
        cfg = ModelConfig.for_kind(kind, **spec)
        cfg.validate()
        return cfg

    def model_names(self) -> list[str]:
        names = []
        for spec in self.models:
            name = spec if isinstance(spec, str) else spec.get("name", spec["kind"])
            if name in names or name in BASELINES:
                raise InvalidConfigError(f"duplicate model name {name!r}", stage="config")
            names.append(name)
        return names

    def to_dict(self) -> dict:
        return asdict(self)


# -------------------------------------------------------------------- queries


@dataclass(frozen=True)
class Query:
    context: RecContext
    relevant: frozenset
    session_id: str = ""


class QueryList(list):
    """Queries plus the number of test sessions too short to use."""

    def __init__(self, queries=(), skipped=0):
        super().__init__(queries)
        self.skipped = skipped


def make_queries(test_sessions, holdout_fraction: float = 0.3, max_len: int = 10) -> QueryList:
    """Leave-tail-out queries: the last ceil(fraction * |s|) items are relevant.

    At least one item is held out and at least one kept as context; sessions
    with fewer than two items are skipped.
    """
    out = QueryList()
    for s in test_sessions:
        n = len(s.items)
        if n < 2:
            out.skipped += 1
            continue
        h = min(max(1, math.ceil(round(holdout_fraction * n, 9))), n - 1)
        ctx = tuple(s.items[: n - h])[-max_len:]
        out.append(Query(RecContext(ctx), frozenset(s.items[n - h :]), s.session_id))
    if not out:
        raise NoUsableQueriesError("no test session has two or more items", stage="queries")
    return out


# ------------------------------------------------------------------ baselines


class PopularityBaseline:
    kind = "popularity"

    def __init__(self, train_sessions, n_items, embeddings):
        self.counts = np.zeros(n_items)
        for s in train_sessions:
            self.counts[list(set(s.items))] += 1.0
        self.item_embeddings = embeddings
        self.n_items = n_items

    def score_batch(self, contexts):
        return np.tile(self.counts, (len(contexts), 1))


class RandomBaseline:
    kind = "random"

    def __init__(self, n_items, embeddings, seed):
        self.n_items = n_items
        self.item_embeddings = embeddings
        self.seed = seed

    def score_batch(self, contexts):
        return np.random.default_rng(self.seed).random((len(contexts), self.n_items))


class ModelScorer:
    def __init__(self, model, embeddings=None):
        self.model = model
        self.kind = model.kind
        self.n_items = model.n_items
        self.item_embeddings = model.item_embeddings if embeddings is None else embeddings

    def score_batch(self, contexts):
        return score_contexts(self.model, contexts)


# ----------------------------------------------------------------- evaluation


@dataclass
class ModelReport:
    name: str
    kind: str
    rows: list
    at_k_eval: dict
    query_count: int
    zero_division: dict = field(default_factory=dict)
    training_log: list = field(default_factory=list)
    cold_items: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "rows": [asdict(r) for r in self.rows],
            "at_K_eval": self.at_k_eval,
            "query_count": self.query_count,
            "zero_division": self.zero_division,
            "training_log": self.training_log,
            "cold_items": self.cold_items,
        }


def evaluate(scorer, queries, k_max: int = 10, k_eval: int = 10, name=None) -> ModelReport:
    """Macro-average accuracy@k and ILD@k over queries for k = 1..k_max, plus
    confusion-based metrics with the top-``k_eval`` list as the predicted positives."""
    n = scorer.n_items
    depth = max(k_max, k_eval)
    scores = scorer.score_batch([q.context for q in queries])
    acc = np.zeros(k_max)
    ild = np.zeros(k_max)
    conf = {"accuracy": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
    zero_div = {"precision": 0, "recall": 0}
    for q, row in zip(queries, scores):
        ranked = metrics.RankedList.from_scores(row, depth, q.context.item_sequence)
        if len(ranked) < depth:
            raise metrics.ListTooShortError(f"catalog exhausted below depth {depth}", stage="evaluate")
        for k in range(1, k_max + 1):
            acc[k - 1] += metrics.accuracy_at_k(ranked, q.relevant, k)
        ild += metrics.ild_curve(ranked, scorer.item_embeddings, k_max)
        c = metrics.confusion_counts(ranked.top(k_eval), q.relevant, n)
        zero_div["precision"] += c.tp + c.fp == 0
        zero_div["recall"] += c.tp + c.fn == 0
        conf["accuracy"] += metrics.accuracy(c)
        conf["precision"] += metrics.precision(c)
        conf["recall"] += metrics.recall(c)
        conf["f1"] += metrics.f1(c)
    m = len(queries)
    rows = [metrics.EvalRow(k, float(acc[k - 1] / m), float(ild[k - 1] / m)) for k in range(1, k_max + 1)]
    return ModelReport(
        name=name or scorer.kind,
        kind=scorer.kind,
        rows=rows,
        at_k_eval={key: v / m for key, v in conf.items()},
        query_count=m,
        zero_division={key: int(v) for key, v in zero_div.items()},
    )


# ----------------------------------------------------------------- experiment


@dataclass
class EvalReport:
    models: list
    metadata: dict
    config: dict
    runtime_seconds: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict, repr=False)
    pipeline_report: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_fingerprint": config_fingerprint(self.config),
            "metadata": self.metadata,
            "models": [m.to_dict() for m in self.models],
        }

    def model(self, name) -> ModelReport:
        for m in self.models:
            if m.name == name:
                return m
        raise KeyError(name)


def _schema_from(spec):
    if spec is None or spec == "default":
        return EventSchema()
    if spec == "retail_rocket":
        return RETAIL_ROCKET_SCHEMA
    if spec == "ratings":
        return RATINGS_SCHEMA
    return EventSchema(**spec)


def load_dataset(spec: dict, seed: int):
    """Resolve a dataset spec into (events, items)."""
    if "synthetic" in spec:
        params = {"n_items": 200, "n_sessions": 2000, "n_blocks": 4, "noise": 0.1, "seed": seed, **spec["synthetic"]}
        items, sessions = generate_synthetic(**params)
        return sessions_to_events(sessions), items
    if "synthetic_dir" in spec:
        items, events, _ = load_synthetic(spec["synthetic_dir"])
        return events, items
    if "events" in spec:
        events = load_events(spec["events"], _schema_from(spec.get("schema")))
        items = []
        if spec.get("items"):
            items = load_items(spec["items"], spec.get("item_numeric", ()), spec.get("item_text", ()))
        return events, items
    raise InvalidConfigError("dataset needs 'synthetic', 'synthetic_dir' or 'events'", stage="config")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except RecBenchError as exc:
        if exc.stage is None:
            exc.stage = name
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise RecBenchError(f"{type(exc).__name__}: {exc}", stage=name) from exc


def prepare_data(config: ExperimentConfig):
    events, items = _stage("ingest", load_dataset, config.dataset, config.seed)
    pcfg = PipelineConfig(gap_seconds=config.gap_seconds, split_ratio=config.split_ratio, reduce_dim=config.reduce_dim)
    return _stage("preprocess", run_pipeline, events, items, pcfg)


def _baseline_embeddings(data):
    fm = data.feature_matrix
    if fm.shape[1] > 0:
        return fm
    return one_hot(data.item_category, max(data.n_categories, 1))


def prepare_graphs(config: ExperimentConfig):
    """Preprocess the dataset and build the train/test co-occurrence graphs."""
    data = prepare_data(config)
    if data.split is None or not data.split.train:
        raise RecBenchError("dataset produced no sessions", stage="split")
    g_train, g_test = _stage("graph", build_split_graphs, data.split, data.item_category)
    return data, g_train, g_test


def fit_models(config: ExperimentConfig, data, g_train) -> dict:
    """Fit every configured model on the training view; returns name -> (model, seconds)."""
    names = config.model_names()
    train = data.train_view()

    def _fit(spec):
        cfg = config.model_config(spec)
        start = time.perf_counter()
        model = _stage(f"fit:{cfg.kind}", fit, cfg, train, g_train)
        return model, time.perf_counter() - start

    if config.jobs > 1:
        with ThreadPoolExecutor(max_workers=config.jobs) as pool:
            fitted = list(pool.map(_fit, config.models))
    else:
        fitted = [_fit(spec) for spec in config.models]
    return dict(zip(names, fitted))


def run_experiment(config: ExperimentConfig, fitted: dict | None = None, prepared=None) -> EvalReport:
    """Preprocess, split, build graphs, fit every model and sweep k = 1..k_max.

    ``fitted`` (name -> TrainedModel) skips training for already-trained
    models; ``prepared`` reuses the output of :func:`prepare_graphs`.
    """
    config.validate()
    data, g_train, g_test = prepared if prepared is not None else prepare_graphs(config)
    train = data.train_view()
    queries = _stage("queries", make_queries, data.split.test, config.holdout_fraction, config.max_len)
    if fitted is None:
        timed = fit_models(config, data, g_train)
    else:
        timed = {name: (model, 0.0) for name, model in fitted.items()}
    models = {name: m for name, (m, _) in timed.items()}
    runtime = {name: t for name, (_, t) in timed.items()}
    reference = None
    if config.ild_reference is not None:
        if config.ild_reference not in models:
            raise InvalidConfigError(f"ild_reference {config.ild_reference!r} is not a configured model", stage="config")
        reference = models[config.ild_reference].item_embeddings

    reports = []
    for name, model in models.items():
        start = time.perf_counter()
        rep = _stage(f"evaluate:{name}", evaluate, ModelScorer(model, reference), queries, config.k_max, config.K_eval, name)
        rep.training_log = list(model.training_log)
        rep.cold_items = list(model.cold_items)
        reports.append(rep)
        runtime[name] += time.perf_counter() - start
    base_emb = reference if reference is not None else _baseline_embeddings(data)
    baselines = [
        PopularityBaseline(train.sessions, data.n_items, base_emb),
        RandomBaseline(data.n_items, base_emb, config.seed),
    ]
    for b in baselines:
        reports.append(_stage(f"evaluate:{b.kind}", evaluate, b, queries, config.k_max, config.K_eval, b.kind))

    train_nodes = set(g_train.node_ids.tolist())
    metadata = {
        "aggregation": "macro_over_sessions",
        "relevance": "leave_tail_out",
        "confusion_universe": "full_catalog",
        "similarity": "own_embeddings" if reference is None else f"reference:{config.ild_reference}",
        "baseline_similarity": "item_features" if reference is None else f"reference:{config.ild_reference}",
        "n_items": data.n_items,
        "n_train_sessions": len(data.split.train),
        "n_test_sessions": len(data.split.test),
        "n_queries": len(queries),
        "skipped_sessions": queries.skipped,
        "test_only_items": sorted(set(g_test.node_ids.tolist()) - train_nodes),
        "data_fingerprint": data.fingerprint(),
        "graph_train": {"nodes": g_train.n_nodes, "edges": g_train.n_edges, "max_count": g_train.max_count},
        "graph_test": {"nodes": g_test.n_nodes, "edges": g_test.n_edges, "max_count": g_test.max_count},
    }
    # where and how parallel the run executed does not change its results
    recorded = {k: v for k, v in config.to_dict().items() if k not in ("output_dir", "jobs")}
    report = EvalReport(reports, metadata, recorded, runtime, models, data.report)
    if config.output_dir:
        _stage("report", write_outputs, report, config.output_dir, g_train, g_test)
    return report


# -------------------------------------------------------------------- reports


def pct(value: float) -> str:
    """Fraction rendered as a percentage with two decimals (0.8612 -> "86.12")."""
    text = f"{value * 100.0:.2f}"
    return "0.00" if text == "-0.00" else text


def render_csv(report_dict: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for m in report_dict["models"]:
        for row in m["rows"]:
            w.writerow([m["name"], row["k"], pct(row["accuracy_at_k"]), pct(row["ild_at_k"])])
    return buf.getvalue()


def render_json(report_dict: dict) -> str:
    return json.dumps(report_dict, indent=2, sort_keys=True) + "\n"


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"encoding": "utf-8", "newline": ""})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}", stage="report") from exc


def emit_report(report, out_dir, fmt: str = "csv") -> Path:
    """Write report.csv or report.json into ``out_dir``; returns the file path."""
    d = report.to_dict() if isinstance(report, EvalReport) else report
    if fmt == "csv":
        path = Path(out_dir) / "report.csv"
        atomic_write(path, render_csv(d))
    elif fmt == "json":
        path = Path(out_dir) / "report.json"
        atomic_write(path, render_json(d))
    else:
        raise InvalidConfigError(f"unknown report format {fmt!r}", stage="report")
    return path


def regenerate_csv(json_path) -> str:
    """CSV text rebuilt from a persisted report.json."""
    try:
        d = json.loads(Path(json_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReportIOError(f"cannot read {json_path}: {exc}", stage="report") from exc
    return render_csv(d)


def write_outputs(report: EvalReport, out_dir, g_train=None, g_test=None):
    out = Path(out_dir)
    emit_report(report, out, "csv")
    emit_report(report, out, "json")
    atomic_write(out / "pipeline_report.json", json.dumps(report.pipeline_report, indent=2, sort_keys=True, default=str) + "\n")
    atomic_write(out / "run_meta.json", json.dumps({"runtime_seconds": report.runtime_seconds}, indent=2, sort_keys=True) + "\n")
    for name, model in report.fitted.items():
        atomic_write(out / "checkpoints" / f"{name}.ckpt", model.checkpoint_bytes())
        atomic_write(out / "checkpoints" / f"{name}.json", json.dumps(model.sidecar(), indent=2, sort_keys=True) + "\n")
    if g_train is not None:
        save_graph(g_train, out / "graph_train.ndjson")
        save_graph(g_test, out / "graph_test.ndjson")
