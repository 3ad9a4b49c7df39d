"""``recbench`` command line: synth, prepare, graph, train, evaluate, sweep, report.

Logs are JSON lines on standard error; results go to files in the output
directory (``--out``, else ``$RECBENCH_OUT``, else ``./recbench-out``) or, for
``report`` without ``--out``, to standard output.
"""

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import bench
from .errors import RecBenchError
from .graph import save_graph
from .ingest import SyntheticConfig, generate_synthetic, write_synthetic
from .models import KINDS, DEFAULT_HYPERPARAMS, load_model

OUT_ENV = "RECBENCH_OUT"
DEFAULT_OUT = "recbench-out"

log = logging.getLogger("recbench")


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        entry = {"level": record.levelname.lower(), "logger": record.name, "msg": record.getMessage()}
        entry.update(getattr(record, "fields", {}))
        return json.dumps(entry, sort_keys=True, default=str)


def _configure_logging(verbosity: int):
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("recbench")
    root.handlers[:] = [handler]
    root.propagate = False
    root.setLevel(logging.WARNING - 10 * min(verbosity, 2) if verbosity else logging.INFO)


def _event(msg, **fields):
    log.info(msg, extra={"fields": fields})


class UsageError(Exception):
    """Bad invocation detected after argument parsing (exit code 2)."""


def _defaults_epilog() -> str:
    lines = ["Default hyperparameters per model kind (lr / batch / epochs / extra):"]
    for kind in KINDS:
        d = dict(DEFAULT_HYPERPARAMS[kind])
        lr, batch, epochs = d.pop("lr"), d.pop("batch"), d.pop("epochs")
        extra = ", ".join(f"{k}={v}" for k, v in d.items()) or "-"
        lines.append(f"  {kind:<12} lr={lr:<7} batch={str(batch) if batch else 'full':<5} epochs={epochs:<3} {extra}")
    lines.append(f"Output directory default: ${OUT_ENV} if set, else ./{DEFAULT_OUT}")
    return "\n".join(lines)


class _Formatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    epilog = _defaults_epilog()
    parser = argparse.ArgumentParser(prog="recbench", description=__doc__, epilog=epilog, formatter_class=_Formatter)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more log output (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def common(p, config=True):
        p.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
        p.add_argument("--seed", type=int, default=None, help="seed override (config value otherwise, default 1)")
        if config:
            p.add_argument("--config", default=None, help="experiment config JSON")
            p.add_argument("--data", default=None, help="synthetic dataset directory written by `synth` (instead of --config)")
            p.add_argument("--jobs", type=int, default=1, help="maximum parallel model fits")

    def overrides(p):
        p.add_argument("--model", action="append", choices=KINDS, default=None, help="restrict to this kind (repeatable; default all 7)")
        p.add_argument("--epochs", type=int, default=None, help="override epochs for every model (per-kind default otherwise)")
        p.add_argument("--lr", type=float, default=None, help="override learning rate for every model")
        p.add_argument("--batch", type=int, default=None, help="override batch size for every model")

    def fmt(p):
        p.add_argument("--format", choices=("csv", "json"), default=None, help="write only this report format (both otherwise)")

    p = sub.add_parser("synth", help="write a seeded planted-block dataset", formatter_class=_Formatter, epilog=epilog)
    common(p, config=False)
    p.add_argument("--items", type=int, default=SyntheticConfig.n_items, help="catalog size")
    p.add_argument("--sessions", type=int, default=SyntheticConfig.n_sessions, help="number of sessions")
    p.add_argument("--blocks", type=int, default=SyntheticConfig.n_blocks, help="number of planted blocks")
    p.add_argument("--noise", type=float, default=SyntheticConfig.noise, help="share of out-of-block items")

    p = sub.add_parser("prepare", help="preprocess and split; writes pipeline_report.json", formatter_class=_Formatter, epilog=epilog)
    common(p)
    p = sub.add_parser("graph", help="build train/test co-occurrence graphs (NDJSON)", formatter_class=_Formatter, epilog=epilog)
    common(p)
    p = sub.add_parser("train", help="fit models; writes checkpoints/", formatter_class=_Formatter, epilog=epilog)
    common(p)
    overrides(p)
    p = sub.add_parser("evaluate", help="evaluate checkpoints from a previous `train`", formatter_class=_Formatter, epilog=epilog)
    common(p)
    overrides(p)
    fmt(p)
    p.add_argument("--checkpoints", default=None, help="checkpoint directory (default: OUT/checkpoints)")
    p = sub.add_parser("sweep", help="full experiment over all configured models", formatter_class=_Formatter, epilog=epilog)
    common(p)
    overrides(p)
    fmt(p)
    p = sub.add_parser("report", help="re-render report.csv from a persisted report.json", formatter_class=_Formatter, epilog=epilog)
    p.add_argument("json_report", help="path to report.json")
    p.add_argument("--out", default=None, help="write report.csv here instead of printing it")
    return parser


# ------------------------------------------------------------------ resolving


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)


def resolve_config(args) -> bench.ExperimentConfig:
    """Merge the config file (or --data), then CLI overrides, into one config."""
    if args.config and args.data:
        raise UsageError("--config and --data are mutually exclusive")
    if args.config:
        path = Path(args.config)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from exc
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UsageError(f"config {path} must hold a JSON object")
        ds = raw.get("dataset", {})
        for key in ("synthetic_dir", "events", "items"):
            if isinstance(ds.get(key), str) and not Path(ds[key]).is_absolute():
                ds[key] = str(path.parent / ds[key])
    elif args.data:
        if not Path(args.data).is_dir():
            raise UsageError(f"dataset directory {args.data} does not exist")
        raw = {"dataset": {"synthetic_dir": args.data}}
    else:
        raise UsageError("one of --config or --data is required")
    if args.seed is not None:
        raw["seed"] = args.seed
    raw["jobs"] = args.jobs
    raw["output_dir"] = str(_out_dir(args))
    kinds = getattr(args, "model", None)
    if kinds:
        raw["models"] = list(dict.fromkeys(kinds))
    over = {k: getattr(args, k, None) for k in ("epochs", "lr", "batch")}
    over = {k: v for k, v in over.items() if v is not None}
    if over:
        models = raw.get("models", list(KINDS))
        raw["models"] = [{**({"kind": m} if isinstance(m, str) else m), **over} for m in models]
    cfg = bench.ExperimentConfig.from_dict(raw)
    resolved = cfg.to_dict()
    resolved["models"] = [asdict(cfg.model_config(m)) for m in cfg.models]
    _event("resolved config", command=args.command, config=resolved)
    return cfg


# ------------------------------------------------------------------- commands


def cmd_synth(args):
    scfg = SyntheticConfig(args.items, args.sessions, args.blocks, args.noise, 1 if args.seed is None else args.seed)
    _event("resolved config", command="synth", config=asdict(scfg))
    scfg.validate()
    items, sessions = generate_synthetic(scfg.n_items, scfg.n_sessions, scfg.n_blocks, scfg.noise, scfg.seed)
    out = _out_dir(args)
    write_synthetic(out, items, sessions, scfg)
    _event("wrote synthetic dataset", path=str(out), items=len(items), sessions=len(sessions))


def cmd_prepare(args):
    cfg = resolve_config(args)
    data = bench.prepare_data(cfg)
    out = _out_dir(args)
    bench.atomic_write(out / "pipeline_report.json", json.dumps(data.report, indent=2, sort_keys=True, default=str) + "\n")
    summary = {
        "fingerprint": data.fingerprint(),
        "n_items": data.n_items,
        "n_categories": data.n_categories,
        "feature_names": list(data.feature_names),
        "n_train_sessions": len(data.split.train),
        "n_test_sessions": len(data.split.test),
    }
    bench.atomic_write(out / "prepared.json", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _event("prepared", path=str(out), **summary)


def cmd_graph(args):
    cfg = resolve_config(args)
    _, g_train, g_test = bench.prepare_graphs(cfg)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    save_graph(g_train, out / "graph_train.ndjson")
    save_graph(g_test, out / "graph_test.ndjson")
    _event("graphs written", path=str(out), train_edges=g_train.n_edges, test_edges=g_test.n_edges)


def cmd_train(args):
    cfg = resolve_config(args)
    data, g_train, _ = bench.prepare_graphs(cfg)
    out = _out_dir(args) / "checkpoints"
    for name, (model, seconds) in bench.fit_models(cfg, data, g_train).items():
        bench.atomic_write(out / f"{name}.ckpt", model.checkpoint_bytes())
        bench.atomic_write(out / f"{name}.json", json.dumps(model.sidecar(), indent=2, sort_keys=True) + "\n")
        _event("trained", model=name, seconds=round(seconds, 3), final_loss=model.training_log[-1])


def _write_reports(report, out, fmt):
    formats = (fmt,) if fmt else ("csv", "json")
    for f in formats:
        path = bench.emit_report(report, out, f)
        _event("report written", path=str(path))


def cmd_evaluate(args):
    cfg = resolve_config(args)
    prepared = bench.prepare_graphs(cfg)
    data, g_train, _ = prepared
    ckpt = Path(args.checkpoints) if args.checkpoints else _out_dir(args) / "checkpoints"
    fitted = {}
    for name in cfg.model_names():
        try:
            fitted[name] = load_model(ckpt, name, data.n_items, g_train)
        except OSError as exc:
            raise RecBenchError(f"cannot load checkpoint {name}: {exc}", stage="load") from exc
    cfg.output_dir = None
    report = bench.run_experiment(cfg, fitted=fitted, prepared=prepared)
    _write_reports(report, _out_dir(args), args.format)


def cmd_sweep(args):
    cfg = resolve_config(args)
    if args.format:
        out, cfg.output_dir = cfg.output_dir, None
        report = bench.run_experiment(cfg)
        _write_reports(report, out, args.format)
    else:
        report = bench.run_experiment(cfg)
    for m in report.models:
        _event("model done", model=m.name, accuracy_at_k_eval=m.rows[min(cfg.K_eval, cfg.k_max) - 1].accuracy_at_k)


def cmd_report(args):
    text = bench.regenerate_csv(args.json_report)
    if args.out:
        bench.atomic_write(Path(args.out) / "report.csv", text)
    else:
        sys.stdout.write(text)


COMMANDS = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "graph": cmd_graph,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _configure_logging(args.verbose)
    start = time.perf_counter()
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        log.error(str(exc), extra={"fields": {"stage": "usage"}})
        return 2
    except RecBenchError as exc:
        stage = exc.stage or "unknown"
        log.error(f"[{stage}] {exc}", extra={"fields": {"stage": stage, "error": type(exc).__name__}})
        return 1
    _event("done", command=args.command, seconds=round(time.perf_counter() - start, 3))
    return 0


def main_entry():  # console-script wrapper
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
