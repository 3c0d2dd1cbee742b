"""End-to-end glue: simulate a batch, build splits, train, score and time."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .datastore import Manifest, ManifestEntry, TrainedModel
from .domain import Label, VmSnapshot
from .eval import ModelResult, TimingReport, evaluate_scores, time_model
from .features import DEFAULT_ROW_CAP, Dataset, DatasetSplit, apply_scaler, build_dataset, fit_scaler, split_dataset
from .models import DEFAULT_MODELS, DISPLAY_NAMES, make_model
from .simulator import SimConfig, experiment_configs, injection_time, run_experiment


def simulate_batch(base: SimConfig, n: int, seed: int, intensity: float | None = None) -> tuple[Iterator[VmSnapshot], Manifest]:
    """Lazy snapshot stream for ``n`` experiments plus their manifest."""
    if n < 1:
        raise ValueError("need at least one experiment")
    jobs = experiment_configs(base, n, seed, intensity)
    per = base.timeline.n_ticks
    entries = [
        ManifestEntry(i, s, None if c.profile is None else c.profile.to_dict(), injection_time(c, s), per)
        for i, s, c in jobs
    ]
    cfg = base.to_dict()
    if intensity is not None and cfg["profile"] is not None:
        cfg["profile"]["intensity"] = intensity

    def stream():
        for i, s, c in jobs:
            yield from run_experiment(c, s, i)

    return stream(), Manifest(entries, cfg, seed)


@dataclass
class Prepared:
    """Scaled train/val/test datasets for one split."""

    split: DatasetSplit
    train: Dataset
    val: Dataset
    test: Dataset
    scaler: object


def prepare(
    snapshots: Sequence[VmSnapshot],
    split: DatasetSplit | None = None,
    split_seed: int = 0,
    row_cap: int = DEFAULT_ROW_CAP,
    fold_injection_window: bool = False,
    groups: dict[int, str] | None = None,
) -> Prepared:
    """Build matrices, split by experiment and scale with train-only bounds.

    ``groups`` maps experiment id to its malware category for a stratified split.
    """
    data = build_dataset(snapshots, row_cap, fold_injection_window=fold_injection_window)
    if split is None:
        ids = np.unique(data.experiment_ids)
        split = split_dataset(ids, seed=split_seed, groups=None if groups is None else [groups[int(i)] for i in ids])
    train, val, test = (data.subset(ids) for ids in (split.train, split.val, split.test))
    scaler = fit_scaler(train)
    scaled = [Dataset(apply_scaler(scaler, d.X), d.y, d.experiment_ids, d.t) for d in (train, val, test)]
    return Prepared(split, *scaled, scaler)


@dataclass
class TrainOutcome:
    model: TrainedModel
    train_times: list[float] = field(default_factory=list)


def train_one(kind: str, prep: Prepared, hyperparams: dict | None = None, runs: int = 1) -> TrainOutcome:
    """Fit ``kind`` on the train split ``runs`` times (seeded, so every fit is identical)."""
    times, model = [], None
    for _ in range(max(1, runs)):
        model = make_model(kind, **(hyperparams or {}))
        t0 = time.perf_counter()
        model.fit(prep.train.X, prep.train.y, prep.val.X, prep.val.y)
        times.append(time.perf_counter() - t0)
    return TrainOutcome(TrainedModel(model, prep.scaler, row_cap=prep.train.X.shape[1]), times)


def evaluate_one(
    tm: TrainedModel,
    test: Dataset,
    threshold: float = 0.5,
    train_times: Sequence[float] | None = None,
    timing_runs: int = 0,
    min_samples: int = 200,
) -> ModelResult:
    """Score the (already scaled) test split; optionally time single-sample detection."""
    scores = tm.model.score(test.X)
    res = evaluate_scores(DISPLAY_NAMES.get(tm.kind, tm.kind), scores, test.y, threshold)
    if timing_runs > 0:
        res.timing = time_model(None, tm.model.score, test.X, runs=timing_runs,
                                min_samples=min_samples, train_times=train_times)
    elif train_times:
        res.timing = TimingReport(float(np.mean(train_times)), 0.0, runs=len(train_times))
    return res


@dataclass
class RunResult:
    results: list[ModelResult]
    models: dict[str, TrainedModel]
    prepared: Prepared
    manifest: Manifest


def run(
    n: int = 10,
    seed: int = 0,
    intensity: float | None = None,
    kinds: Sequence[str] = DEFAULT_MODELS,
    hyperparams: dict[str, dict] | None = None,
    base: SimConfig | None = None,
    split_seed: int = 0,
    train_runs: int = 1,
    timing_runs: int = 0,
) -> RunResult:
    """Simulate, split, train and evaluate in memory."""
    stream, manifest = simulate_batch(base or SimConfig(), n, seed, intensity)
    prep = prepare(list(stream), split_seed=split_seed, groups=manifest_groups(manifest))
    results, models = [], {}
    for kind in kinds:
        out = train_one(kind, prep, (hyperparams or {}).get(kind), runs=train_runs)
        models[kind] = out.model
        results.append(evaluate_one(out.model, prep.test, train_times=out.train_times, timing_runs=timing_runs))
    return RunResult(results, models, prep, manifest)


def manifest_groups(manifest: Manifest) -> dict[int, str]:
    return {e.id: (e.profile or {}).get("category", "none") for e in manifest.experiments}


def label_counts(snapshots: Sequence[VmSnapshot]) -> dict[str, int]:
    out = {lab.name: 0 for lab in Label}
    for s in snapshots:
        out[s.label.name] += 1
    return out
