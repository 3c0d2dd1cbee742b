"""Confusion-matrix metrics, ROC/AUC, timing and comparison reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionMatrix":
        t = np.asarray(y_true).astype(bool)
        p = np.asarray(y_pred).astype(bool)
        if t.shape != p.shape:
            raise ValueError("prediction and label arrays differ in shape")
        return cls(int(np.sum(t & p)), int(np.sum(~t & ~p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    undefined: tuple[str, ...] = ()  # metrics whose denominator was zero (reported as 0)


def metrics(cm: ConfusionMatrix) -> Metrics:
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    undefined = []

    def ratio(num, den, name):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    accuracy = (cm.tp + cm.tn) / cm.total
    precision = ratio(cm.tp, cm.tp + cm.fp, "precision")
    recall = ratio(cm.tp, cm.tp + cm.fn, "recall")
    f1 = f1_score(precision, recall)
    if precision + recall == 0:
        undefined.append("f1")
    return Metrics(accuracy, precision, recall, f1, tuple(undefined))


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist(), self.thresholds.tolist()))


def roc(scores: Sequence[float], labels: Sequence[int]) -> RocCurve:
    """ROC over every distinct score, descending; AUC by the trapezoid rule.

    The first point sits at threshold +inf (nothing flagged). Tied scores
    share one point, so ties contribute the half-credit diagonal segment.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC needs both classes")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tps = np.cumsum(y)[last]
    fps = (last + 1) - tps
    tpr = np.r_[0.0, tps / n_pos]
    fpr = np.r_[0.0, fps / n_neg]
    thr = np.r_[np.inf, s[last]]
    auc = float(np.sum((fpr[1:] - fpr[:-1]) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


@dataclass(frozen=True)
class TimingReport:
    train_time_s: float
    detect_time_ms: float
    train_time_std_s: float = 0.0
    detect_time_std_ms: float = 0.0
    runs: int = 1
    n_scored: int = 0


def time_model(
    fit: Callable[[], object] | None,
    score_one: Callable[[np.ndarray], object],
    test_X: np.ndarray,
    runs: int = 3,
    min_samples: int = 1000,
    train_times: Sequence[float] | None = None,
) -> TimingReport:
    """Wall-clock training time and single-sample detection latency.

    ``fit`` is timed ``runs`` times unless ``train_times`` are supplied. Each
    detection run scores samples one by one as batches of one (cycling the
    test set until at least ``min_samples`` are scored) after one untimed
    warm-up call; the samples are already in memory, so no loading is included.
    """
    if train_times is None:
        train_times = []
        for _ in range(runs if fit is not None else 0):
            t0 = time.perf_counter()
            fit()
            train_times.append(time.perf_counter() - t0)
    train_times = list(train_times) or [0.0]
    if len(test_X) == 0:
        raise ValueError("no test samples to time")
    n = max(min_samples, len(test_X))
    score_one(test_X[:1])
    per_run = []
    for _ in range(runs):
        t0 = time.perf_counter()
        for i in range(n):
            j = i % len(test_X)
            score_one(test_X[j:j + 1])
        per_run.append((time.perf_counter() - t0) / n * 1000.0)
    std = lambda xs: statistics.stdev(xs) if len(xs) > 1 else 0.0  # noqa: E731
    return TimingReport(
        float(np.mean(train_times)), float(np.mean(per_run)), std(train_times), std(per_run), max(runs, len(train_times)), n
    )


# ---------------------------------------------------------------------------
# reports


@dataclass
class ModelResult:
    model: str
    metrics: Metrics | None = None
    roc: RocCurve | None = None
    timing: TimingReport | None = None
    flags: list[str] = field(default_factory=list)


def evaluate_scores(model: str, scores, labels, threshold: float = 0.5) -> ModelResult:
    labels = np.asarray(labels)
    pred = (np.asarray(scores) >= threshold).astype(int)
    res = ModelResult(model, metrics(ConfusionMatrix.from_predictions(labels, pred)))
    if res.metrics.undefined:
        res.flags.append("undefined:" + ",".join(res.metrics.undefined))
    try:
        res.roc = roc(scores, labels)
    except ValueError as exc:
        res.flags.append(f"no-roc: {exc}")
    return res


def _pct(x):
    return f"{100 * x:.2f}%"


METRIC_COLUMNS = ("Model", "Accuracy", "Precision", "Recall", "F1")
TIMING_COLUMNS = ("Model", "Time to Train (s)", "Train std (s)", "Detection Time (ms)", "Detect std (ms)")


def metrics_rows(results: Sequence[ModelResult]):
    rows = []
    for r in results:
        m = r.metrics
        auc = "" if r.roc is None else f"{r.roc.auc:.4f}"
        if m is None:
            rows.append([r.model, "", "", "", "", auc, ";".join(r.flags)])
        else:
            rows.append([r.model, _pct(m.accuracy), _pct(m.precision), _pct(m.recall), _pct(m.f1), auc, ";".join(r.flags)])
    return rows


def timing_rows(results: Sequence[ModelResult]):
    rows = []
    for r in results:
        t = r.timing
        if t is None:
            rows.append([r.model, "", "", "", ""])
        else:
            rows.append([r.model, f"{t.train_time_s:.3f}", f"{t.train_time_std_s:.3f}",
                         f"{t.detect_time_ms:.4f}", f"{t.detect_time_std_ms:.4f}"])
    return rows


def format_table(header, rows) -> str:
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    line = lambda row: " | ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()  # noqa: E731
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([line(cells[0]), sep] + [line(r) for r in cells[1:]])


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def report(results: Sequence[ModelResult], out_dir: str | os.PathLike) -> dict:
    """Write the metric table, timing table, per-model ROC points and a JSON summary."""
    if not results:
        raise ValueError("report needs at least one evaluated model")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mh = METRIC_COLUMNS + ("AUC", "Flags")
    mrows, trows = metrics_rows(results), timing_rows(results)
    text = format_table(mh, mrows) + "\n\n" + format_table(TIMING_COLUMNS, trows) + "\n"
    _atomic_write(out / "metrics.txt", format_table(mh, mrows) + "\n")
    _atomic_write(out / "metrics.csv", _csv(mh, mrows))
    _atomic_write(out / "timing.txt", format_table(TIMING_COLUMNS, trows) + "\n")
    _atomic_write(out / "timing.csv", _csv(TIMING_COLUMNS, trows))
    roc_files = []
    for r in results:
        if r.roc is None:
            continue
        rows = [[repr(f), repr(t), "inf" if math.isinf(th) else repr(th)] for f, t, th in r.roc.points()]
        path = out / f"roc_{r.model.lower()}.csv"
        _atomic_write(path, _csv(("fpr", "tpr", "threshold"), rows))
        roc_files.append(path.name)
    summary = {
        "models": [
            {
                "model": r.model,
                "metrics": None if r.metrics is None else {**asdict(r.metrics), "undefined": list(r.metrics.undefined)},
                "auc": None if r.roc is None else r.roc.auc,
                "timing": None if r.timing is None else asdict(r.timing),
                "flags": r.flags,
            }
            for r in results
        ],
        "roc_files": roc_files,
    }
    _atomic_write(out / "report.json", json.dumps(summary, indent=2) + "\n")
    return {"text": text, "summary": summary}


def results_from_summary(summary: dict, roc_dir: str | os.PathLike | None = None) -> list[ModelResult]:
    """Rebuild results from a ``report.json`` (and its ROC files, if present)."""
    out = []
    for m in summary["models"]:
        met = m.get("metrics")
        r = ModelResult(m["model"], flags=list(m.get("flags", [])))
        if met is not None:
            r.metrics = Metrics(met["accuracy"], met["precision"], met["recall"], met["f1"], tuple(met.get("undefined", ())))
        if m.get("timing"):
            r.timing = TimingReport(**m["timing"])
        if m.get("auc") is not None and roc_dir is not None:
            path = Path(roc_dir) / f"roc_{m['model'].lower()}.csv"
            if path.exists():
                with open(path) as fh:
                    rows = list(csv.DictReader(fh))
                arr = lambda k: np.array([float(x[k]) for x in rows])  # noqa: E731
                r.roc = RocCurve(arr("fpr"), arr("tpr"), arr("threshold"), float(m["auc"]))
        out.append(r)
    return out
