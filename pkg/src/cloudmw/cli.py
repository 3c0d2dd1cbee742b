"""Command-line entry points: simulate, train, evaluate, detect, report.

Every subcommand accepts ``--config FILE`` (YAML or JSON). Keys in the file use
the flag names with dashes or underscores and override the command line.
``CLOUDMW_OUTPUT_DIR`` sets the default output directory.

``detect`` exits 0 when every verdict is benign, 3 when any snapshot is
flagged infected, and 1 on errors (including malformed records skipped with
``--on-error continue`` when nothing was flagged).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import datastore as ds
from .domain import Label
from .eval import (
    METRIC_COLUMNS, TIMING_COLUMNS, TimingReport, evaluate_scores, format_table, metrics_rows, report,
    results_from_summary, time_model, timing_rows,
)
from .features import (
    DEFAULT_ROW_CAP, Dataset, DatasetSplit, apply_scaler, build_dataset, fit_scaler, snapshot_matrix, split_dataset,
)
from .models import DEFAULT_MODELS, DISPLAY_NAMES, MODEL_KINDS, make_model
from .pipeline import manifest_groups, simulate_batch
from .simulator import ConfigError, SimConfig

EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_ALERT = 0, 1, 2, 3
FULL_N = 113
DESK_N = 10


class CliError(Exception):
    pass


def default_out() -> str:
    return os.environ.get("CLOUDMW_OUTPUT_DIR", "cloudmw-out")


# ---------------------------------------------------------------------------
# run configs, validated before any work starts


def _parse_models(spec) -> tuple[str, ...]:
    if isinstance(spec, (list, tuple)):
        items = [str(s) for s in spec]
    else:
        items = [s.strip() for s in str(spec).split(",") if s.strip()]
    if items == ["all"]:
        return DEFAULT_MODELS
    bad = [m for m in items if m not in MODEL_KINDS]
    if bad or not items:
        raise CliError(f"unknown model(s) {bad or items}; choose from {sorted(MODEL_KINDS)} or 'all'")
    return tuple(dict.fromkeys(items))


def _parse_sets(items) -> dict[str, dict]:
    """``kind.param=value`` pairs (values parsed as YAML scalars) into nested dicts."""
    if isinstance(items, dict):
        return {k: dict(v) for k, v in items.items()}
    out: dict[str, dict] = {}
    for item in items or ():
        try:
            lhs, value = item.split("=", 1)
            kind, param = lhs.split(".", 1)
        except ValueError:
            raise CliError(f"--set expects kind.param=value, got {item!r}") from None
        out.setdefault(kind, {})[param] = yaml.safe_load(value)
    return out


@dataclass(frozen=True)
class SimulateConfig:
    out: str
    n: int = DESK_N
    seed: int = 0
    intensity: float | None = None
    format: str = "binary"
    jsonl: str | None = None
    sim: dict = field(default_factory=dict)

    def validate(self):
        if self.n < 1:
            raise CliError("-n must be at least 1")
        if self.format not in ("binary", "text"):
            raise CliError("--format must be binary or text")
        if self.intensity is not None and not 0.0 <= self.intensity <= 1.0:
            raise CliError("--intensity must be in [0, 1]")
        try:
            SimConfig.from_dict(self.sim)
        except ConfigError as exc:
            raise CliError(f"invalid simulator config: {exc}") from exc


@dataclass(frozen=True)
class TrainConfig:
    dataset: str
    out: str
    manifest: str | None = None
    models: tuple[str, ...] = DEFAULT_MODELS
    split_seed: int = 0
    row_cap: int = DEFAULT_ROW_CAP
    train_runs: int = 1
    fold_injection_window: bool = False
    hyperparams: dict = field(default_factory=dict)

    def validate(self):
        if not Path(self.dataset).exists():
            raise CliError(f"dataset {self.dataset} does not exist")
        if self.row_cap < 1 or self.train_runs < 1:
            raise CliError("--row-cap and --train-runs must be positive")
        unknown = set(self.hyperparams) - set(MODEL_KINDS)
        if unknown:
            raise CliError(f"hyperparameters given for unknown models {sorted(unknown)}")


@dataclass(frozen=True)
class EvaluateConfig:
    dataset: str
    models_dir: str
    out: str
    split: str | None = None
    models: tuple[str, ...] | None = None
    threshold: float = 0.5
    timing_runs: int = 3
    min_samples: int = 200

    def validate(self):
        for p in (self.dataset, self.models_dir):
            if not Path(p).exists():
                raise CliError(f"{p} does not exist")
        if self.timing_runs < 0:
            raise CliError("--timing-runs must be non-negative")


@dataclass(frozen=True)
class DetectConfig:
    model: str
    input: str = "-"
    output: str = "-"
    threshold: float = 0.5
    on_error: str = "abort"

    def validate(self):
        if not Path(self.model).exists():
            raise CliError(f"model {self.model} does not exist")
        if self.on_error not in ("abort", "continue"):
            raise CliError("--on-error must be abort or continue")
        if self.input != "-" and not Path(self.input).exists():
            raise CliError(f"input {self.input} does not exist")


@dataclass(frozen=True)
class ReportConfig:
    source: str
    out: str | None = None


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise CliError(f"config {path} is not valid YAML/JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise CliError(f"config {path} must hold a mapping")
    return {k.replace("-", "_"): v for k, v in data.items()}


def _merge(cls, values: dict, file_values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(file_values) - names
    if unknown:
        raise CliError(f"unknown config keys {sorted(unknown)} for this command")
    merged = {k: v for k, v in values.items() if k in names}
    merged.update(file_values)
    try:
        cfg = cls(**merged)
    except TypeError as exc:
        raise CliError(str(exc)) from exc
    if hasattr(cfg, "validate"):
        cfg.validate()
    return cfg


# ---------------------------------------------------------------------------
# commands


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_simulate(cfg: SimulateConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    base = SimConfig.from_dict(cfg.sim)
    stream, manifest = simulate_batch(base, cfg.n, cfg.seed, cfg.intensity)
    path = out / ("dataset.csv" if cfg.format == "text" else "dataset.cmwd")
    if cfg.jsonl:
        snaps = list(stream)
        ds.write_jsonl(snaps, cfg.jsonl)
        stream = iter(snaps)
    header = ds.write_dataset(stream, path, base.schema, base.timeline, extra={"seed": cfg.seed})
    manifest.reconcile(header)
    ds.write_manifest(manifest, out / "manifest.json")
    _log(f"wrote {header['snapshot_count']} snapshots from {header['experiment_count']} experiments to {path}")
    print(json.dumps({"dataset": str(path), "manifest": str(out / "manifest.json"),
                      "records": header["snapshot_count"], "experiments": header["experiment_count"]}))
    return EXIT_OK


def _manifest_for(dataset: str, explicit: str | None):
    path = Path(explicit) if explicit else Path(dataset).with_name("manifest.json")
    return ds.read_manifest(path) if path.exists() else None


def _subset(snapshots, ids) -> list:
    keep = set(int(i) for i in ids)
    return [s for s in snapshots if s.experiment_id in keep]


def cmd_train(cfg: TrainConfig) -> int:
    data = ds.read_dataset(cfg.dataset)
    manifest = _manifest_for(cfg.dataset, cfg.manifest)
    if manifest is not None:
        manifest.reconcile(data.header)
    ids = sorted({s.experiment_id for s in data})
    groups = None
    if manifest is not None:
        g = manifest_groups(manifest)
        groups = [g[i] for i in ids]
    split = split_dataset(ids, seed=cfg.split_seed, groups=groups)
    schema = data.schema
    build = lambda part: build_dataset(_subset(data, part), cfg.row_cap, schema, cfg.fold_injection_window)  # noqa: E731
    train, val = build(split.train), build(split.val)
    scaler = fit_scaler(train)
    Xtr, Xva = apply_scaler(scaler, train.X), apply_scaler(scaler, val.X)
    out = Path(cfg.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    ds.atomic_write_text(out / "split.json", json.dumps(split.to_dict(), indent=2) + "\n")
    times = {}
    for kind in cfg.models:
        runs = []
        for _ in range(cfg.train_runs):
            model = make_model(kind, **cfg.hyperparams.get(kind, {}))
            t0 = time.perf_counter()
            model.fit(Xtr, train.y, Xva, val.y)
            runs.append(time.perf_counter() - t0)
        tm = ds.TrainedModel(model, scaler, schema, cfg.row_cap)
        ds.save_model(tm, out / "models" / f"{kind}.cmwm")
        times[kind] = runs
        _log(f"trained {kind} in {np.mean(runs):.2f}s ({len(runs)} run(s))")
    ds.atomic_write_text(out / "train_times.json", json.dumps(times, indent=2) + "\n")
    print(json.dumps({"models": [f"{k}.cmwm" for k in cfg.models], "split": split.to_dict()}))
    return EXIT_OK


def cmd_evaluate(cfg: EvaluateConfig) -> int:
    models_dir = Path(cfg.models_dir)
    split_path = Path(cfg.split) if cfg.split else models_dir.parent / "split.json"
    if not split_path.exists():
        raise CliError(f"split file {split_path} not found")
    split = DatasetSplit.from_dict(json.loads(split_path.read_text()))
    kinds = cfg.models or tuple(k for k in MODEL_KINDS if (models_dir / f"{k}.cmwm").exists())
    if not kinds:
        raise CliError(f"no model files in {models_dir}")
    times_path = models_dir.parent / "train_times.json"
    train_times = json.loads(times_path.read_text()) if times_path.exists() else {}
    data = ds.read_dataset(cfg.dataset)
    test_snaps = _subset(data, split.test)
    seen = sorted({s.experiment_id for s in test_snaps})
    if not set(seen) <= set(split.test) or set(seen) & (set(split.train) | set(split.val)):
        raise CliError("test snapshots overlap the train/val experiments")
    results, row_caps = [], {}
    test_cache: dict[tuple, Dataset] = {}
    for kind in kinds:
        path = models_dir / f"{kind}.cmwm"
        if not path.exists():
            raise CliError(f"missing model file {path}")
        tm = ds.load_model(path, expected_kind=kind, schema_hash=data.schema.digest(ds.read_model_header(path)["row_cap"]))
        key = (tm.row_cap,)
        if key not in test_cache:
            test_cache[key] = build_dataset(test_snaps, tm.row_cap, data.schema)
        test = test_cache[key]
        X = tm.prepare(test.X)
        scores = tm.model.score(X)
        res = evaluate_scores(DISPLAY_NAMES[kind], scores, test.y, cfg.threshold)
        tt = train_times.get(kind)
        if cfg.timing_runs > 0:
            res.timing = time_model(None, tm.model.score, X, runs=cfg.timing_runs, min_samples=cfg.min_samples, train_times=tt)
        elif tt:
            res.timing = TimingReport(float(np.mean(tt)), 0.0, runs=len(tt))
        results.append(res)
        row_caps[kind] = tm.row_cap
        _log(f"evaluated {kind}")
    out = report(results, cfg.out)
    meta = {**out["summary"], "test_experiments": seen, "split": split.to_dict(), "threshold": cfg.threshold}
    ds.atomic_write_text(Path(cfg.out) / "report.json", json.dumps(meta, indent=2) + "\n")
    print(out["text"], end="")
    return EXIT_OK


def cmd_detect(cfg: DetectConfig) -> int:
    tm = ds.load_model(cfg.model)
    src = sys.stdin if cfg.input == "-" else open(cfg.input)
    dst = sys.stdout if cfg.output == "-" else open(cfg.output, "w")
    flagged = errors = scored = 0
    try:
        for lineno, line in enumerate(src, 1):
            if not line.strip():
                continue
            try:
                snap = ds.snapshot_from_json(line, tm.schema)
            except ds.DatastoreError as exc:
                errors += 1
                _log(f"line {lineno}: {exc}")
                if cfg.on_error == "abort":
                    return EXIT_ERROR
                continue
            t0 = time.perf_counter()
            score = float(tm.score(snapshot_matrix(snap, tm.row_cap, tm.schema).data)[0])
            latency = (time.perf_counter() - t0) * 1000.0
            verdict = Label.INFECTED.name if score >= cfg.threshold else Label.BENIGN.name
            flagged += verdict == Label.INFECTED.name
            scored += 1
            dst.write(json.dumps({"t": snap.t, "score": score, "verdict": verdict, "latency_ms": latency}) + "\n")
    finally:
        if src is not sys.stdin:
            src.close()
        if dst is not sys.stdout:
            dst.close()
    _log(f"scored {scored} snapshot(s): {flagged} infected, {errors} malformed")
    if flagged:
        return EXIT_ALERT
    return EXIT_ERROR if errors else EXIT_OK


def cmd_report(cfg: ReportConfig) -> int:
    src = Path(cfg.source)
    path = src / "report.json" if src.is_dir() else src
    if not path.exists():
        raise CliError(f"no report at {path}")
    summary = json.loads(path.read_text())
    results = results_from_summary(summary, path.parent)
    text = format_table(METRIC_COLUMNS + ("AUC", "Flags"), metrics_rows(results)) + "\n\n" + \
        format_table(TIMING_COLUMNS, timing_rows(results)) + "\n"
    if cfg.out:
        report(results, cfg.out)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cloudmw", description="Simulated cloud malware detection pipeline.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML/JSON file whose keys override these flags")

    s = sub.add_parser("simulate", help="run experiments and write a dataset plus manifest")
    common(s)
    s.add_argument("-n", type=int, default=DESK_N, help=f"number of experiments (default {DESK_N})")
    s.add_argument("--full", action="store_true", help=f"run the full {FULL_N}-experiment batch")
    s.add_argument("--seed", type=int, default=0, help="base seed (default 0)")
    s.add_argument("--intensity", type=float, help="malware intensity in [0, 1] for every experiment")
    s.add_argument("--format", choices=("binary", "text"), default="binary", help="dataset encoding")
    s.add_argument("--jsonl", help="also write the snapshot stream as JSON lines to this path")
    s.add_argument("--out", default=None, help="output directory (default $CLOUDMW_OUTPUT_DIR or ./cloudmw-out)")

    t = sub.add_parser("train", help="fit the scaler and the requested models on the train split")
    common(t)
    t.add_argument("--dataset", required=True, help="dataset file written by simulate")
    t.add_argument("--manifest", help="manifest path (default: manifest.json next to the dataset)")
    t.add_argument("--models", default="all", help="comma-separated kinds or 'all' (%s)" % ",".join(MODEL_KINDS))
    t.add_argument("--split-seed", type=int, default=0, help="seed of the experiment-level split")
    t.add_argument("--row-cap", type=int, default=DEFAULT_ROW_CAP, help="matrix rows per sample")
    t.add_argument("--train-runs", type=int, default=1, help="fits per model for timing (all identical)")
    t.add_argument("--fold-injection-window", action="store_true", help="count injection-window samples as infected")
    t.add_argument("--set", action="append", default=[], metavar="KIND.PARAM=VALUE", help="hyperparameter override")
    t.add_argument("--out", default=None, help="output directory")

    e = sub.add_parser("evaluate", help="score saved models on the test split and write reports")
    common(e)
    e.add_argument("--dataset", required=True)
    e.add_argument("--models-dir", help="directory of .cmwm files (default <out>/models)")
    e.add_argument("--split", help="split.json (default next to the models directory)")
    e.add_argument("--models", help="subset of model kinds to evaluate")
    e.add_argument("--threshold", type=float, default=0.5, help="verdict threshold (default 0.5)")
    e.add_argument("--timing-runs", type=int, default=3, help="detection timing repetitions (0 disables)")
    e.add_argument("--min-samples", type=int, default=200, help="samples scored per timing run")
    e.add_argument("--out", default=None, help="output directory (report goes to <out>/report)")

    d = sub.add_parser("detect", help="score a JSON-lines snapshot stream; exit 3 on any infected verdict",
                       epilog="exit status: 0 all benign, 3 at least one infected verdict, "
                              "1 malformed input or other error, 2 usage error")
    common(d)
    d.add_argument("--model", required=True, help="saved model file")
    d.add_argument("--input", default="-", help="JSON-lines snapshots (default stdin)")
    d.add_argument("--output", default="-", help="verdict lines (default stdout)")
    d.add_argument("--threshold", type=float, default=0.5, help="score at or above which a snapshot is infected")
    d.add_argument("--on-error", choices=("abort", "continue"), default="abort",
                   help="on a malformed record, stop (abort) or skip it and go on (continue)")

    r = sub.add_parser("report", help="print (and optionally re-emit) a saved evaluation report")
    common(r)
    r.add_argument("source", nargs="?", default=None, help="report directory or report.json")
    r.add_argument("--out", help="write the tables and ROC files again into this directory")
    return p


def _to_config(args: argparse.Namespace):
    file_values = _load_config_file(args.config)
    out = args.out if getattr(args, "out", None) else None
    if args.command == "simulate":
        vals = dict(out=out or default_out(), n=FULL_N if args.full else args.n, seed=args.seed, intensity=args.intensity,
                    format=args.format, jsonl=args.jsonl)
        if file_values.get("full"):
            file_values["n"] = FULL_N
        file_values.pop("full", None)
        return cmd_simulate, _merge(SimulateConfig, vals, file_values)
    if args.command == "train":
        if "models" in file_values:
            file_values["models"] = _parse_models(file_values["models"])
        if "hyperparams" in file_values:
            file_values["hyperparams"] = _parse_sets(file_values["hyperparams"])
        vals = dict(dataset=args.dataset, out=out or default_out(), manifest=args.manifest, models=_parse_models(args.models),
                    split_seed=args.split_seed, row_cap=args.row_cap, train_runs=args.train_runs,
                    fold_injection_window=args.fold_injection_window, hyperparams=_parse_sets(args.set))
        return cmd_train, _merge(TrainConfig, vals, file_values)
    if args.command == "evaluate":
        base = out or default_out()
        if "models" in file_values:
            file_values["models"] = _parse_models(file_values["models"])
        vals = dict(dataset=args.dataset, models_dir=args.models_dir or str(Path(base) / "models"),
                    out=str(Path(base) / "report"), split=args.split,
                    models=_parse_models(args.models) if args.models else None, threshold=args.threshold,
                    timing_runs=args.timing_runs, min_samples=args.min_samples)
        return cmd_evaluate, _merge(EvaluateConfig, vals, file_values)
    if args.command == "detect":
        vals = dict(model=args.model, input=args.input, output=args.output, threshold=args.threshold, on_error=args.on_error)
        return cmd_detect, _merge(DetectConfig, vals, file_values)
    vals = dict(source=args.source or str(Path(default_out()) / "report"), out=out)
    return cmd_report, _merge(ReportConfig, vals, file_values)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        fn, cfg = _to_config(args)
        return fn(cfg)
    except (CliError, ds.DatastoreError, ConfigError, OSError, ValueError) as exc:
        _log(f"cloudmw {args.command}: error: {exc}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
