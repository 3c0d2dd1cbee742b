"""Unique-process aggregation, fixed-shape sample matrices, scaling and splits."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import DEFAULT_SCHEMA, FeatureSchema, Label, ProcessRecord, VmSnapshot

DEFAULT_ROW_CAP = 128


@dataclass(frozen=True, eq=False)
class UniqueProcessRow:
    key: tuple[str, str]
    values: np.ndarray
    multiplicity: int

    def as_record(self) -> ProcessRecord:
        return ProcessRecord(self.key[0], self.key[1], tuple(float(v) for v in self.values))


@dataclass(frozen=True, eq=False)
class SampleMatrix:
    data: np.ndarray  # (P, F)
    row_keys: tuple
    label: Label | None = None
    dropped: int = 0


def _group(keys: Sequence[tuple], values: np.ndarray):
    """Sorted unique keys, per-group means and multiplicities."""
    values = np.asarray(values, dtype=np.float64)
    index: dict[tuple, list[int]] = {}
    for i, k in enumerate(keys):
        index.setdefault(tuple(k), []).append(i)
    uniq = sorted(index)
    if not uniq:
        width = values.shape[1] if values.ndim == 2 else 0
        return [], np.zeros((0, width)), np.zeros(0, dtype=int)
    means = np.stack([values[index[k]].mean(axis=0) for k in uniq])
    counts = np.array([len(index[k]) for k in uniq])
    return uniq, means, counts


def aggregate_unique(processes: Iterable[ProcessRecord] | VmSnapshot) -> list[UniqueProcessRow]:
    """Merge records sharing (name, cmdline) into their component-wise mean."""
    if isinstance(processes, VmSnapshot):
        keys, values = processes.keys, processes.values
    else:
        recs = list(processes)
        keys = [r.key for r in recs]
        values = np.array([r.values for r in recs], dtype=np.float64)
    uniq, means, counts = _group(keys, values)
    return [UniqueProcessRow(k, m, int(c)) for k, m, c in zip(uniq, means, counts)]


def _fill(keys: list, means: np.ndarray, row_cap: int, cpu_col: int, n_features: int):
    if row_cap < 1:
        raise ValueError("row cap must be >= 1")
    data = np.zeros((row_cap, n_features))
    n = len(keys)
    dropped = max(0, n - row_cap)
    if dropped:
        # keep the busiest rows; ties keep the earlier key
        order = np.argsort(-means[:, cpu_col], kind="stable")[:row_cap]
        keep = np.sort(order)
        keys = [keys[i] for i in keep]
        means = means[keep]
    data[: len(keys)] = means
    return data, tuple(keys), dropped


def build_matrix(
    rows: Sequence[UniqueProcessRow],
    row_cap: int = DEFAULT_ROW_CAP,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    label: Label | None = None,
) -> SampleMatrix:
    rows = sorted(rows, key=lambda r: r.key)
    keys = [r.key for r in rows]
    means = np.array([r.values for r in rows], dtype=np.float64).reshape(len(rows), schema.count)
    data, kept, dropped = _fill(keys, means, row_cap, schema.index("cpu_user_frac"), schema.count)
    return SampleMatrix(data, kept, label, dropped)


def snapshot_matrix(s: VmSnapshot, row_cap: int = DEFAULT_ROW_CAP, schema: FeatureSchema = DEFAULT_SCHEMA) -> SampleMatrix:
    uniq, means, _ = _group(s.keys, s.values)
    data, kept, dropped = _fill(uniq, means.reshape(len(uniq), schema.count), row_cap, schema.index("cpu_user_frac"), schema.count)
    return SampleMatrix(data, kept, s.label, dropped)


@dataclass
class Dataset:
    X: np.ndarray  # (n, P, F)
    y: np.ndarray  # 0 benign, 1 infected
    experiment_ids: np.ndarray
    t: np.ndarray
    dropped_rows: int = 0

    def __len__(self):
        return len(self.y)

    def subset(self, experiment_ids: Iterable[int]) -> "Dataset":
        mask = np.isin(self.experiment_ids, np.asarray(list(experiment_ids), dtype=self.experiment_ids.dtype))
        return Dataset(self.X[mask], self.y[mask], self.experiment_ids[mask], self.t[mask])

    def flat(self) -> np.ndarray:
        return self.X.reshape(len(self.X), -1)


def build_dataset(
    snapshots: Iterable[VmSnapshot],
    row_cap: int = DEFAULT_ROW_CAP,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    fold_injection_window: bool = False,
) -> Dataset:
    """Matrices for every usable snapshot.

    Injection-window snapshots are dropped unless ``fold_injection_window``,
    in which case they count as infected.
    """
    X, y, eids, ts = [], [], [], []
    dropped = 0
    for s in snapshots:
        if s.label == Label.INJECTION_WINDOW and not fold_injection_window:
            continue
        m = snapshot_matrix(s, row_cap, schema)
        dropped += m.dropped
        X.append(m.data)
        y.append(0 if s.label == Label.BENIGN else 1)
        eids.append(s.experiment_id)
        ts.append(s.t)
    X = np.stack(X) if X else np.zeros((0, row_cap, schema.count))
    return Dataset(X, np.asarray(y, dtype=np.int64), np.asarray(eids, dtype=np.int64), np.asarray(ts, dtype=np.float64), dropped)


@dataclass(frozen=True, eq=False)
class Scaler:
    lo: np.ndarray  # (F,)
    hi: np.ndarray

    def apply(self, m):
        return apply_scaler(self, m)


def _as_array(m) -> np.ndarray:
    if isinstance(m, SampleMatrix):
        return m.data
    if isinstance(m, (list, tuple)):
        return np.stack([_as_array(x) for x in m])
    return np.asarray(m, dtype=np.float64)


def fit_scaler(train) -> Scaler:
    """Per-feature min/max over every cell of the training matrices."""
    arr = _as_array(train) if not isinstance(train, Dataset) else train.X
    if arr.size == 0:
        raise ValueError("cannot fit a scaler on an empty training set")
    flat = arr.reshape(-1, arr.shape[-1])
    return Scaler(flat.min(axis=0), flat.max(axis=0))


def apply_scaler(s: Scaler, m):
    """Map features to [0, 1] with the training range; constant features map to 0."""
    arr = _as_array(m)
    span = s.hi - s.lo
    const = span == 0
    safe = np.where(const, 1.0, span)
    out = np.clip((arr - s.lo) / safe, 0.0, 1.0)
    out[..., const] = 0.0
    if isinstance(m, SampleMatrix):
        return SampleMatrix(out, m.row_keys, m.label, m.dropped)
    return out


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    ratios: tuple[float, float, float]
    seed: int

    def to_dict(self):
        return {"train": list(self.train), "val": list(self.val), "test": list(self.test),
                "ratios": list(self.ratios), "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), tuple(d["ratios"]), int(d["seed"]))


def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment with every part at least 1.

    Floors of ``n * ratio`` are topped up by descending fractional part; ties go
    to the later part (test before validation before train). Parts left empty
    borrow one experiment from the largest part.
    """
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x + 1e-9)) for x in raw]
    rest = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), -i))
    for i in order[:rest]:
        counts[i] += 1
    for i in range(len(counts)):
        if counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: (counts[j], -j))
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_dataset(
    experiment_ids: Sequence[int], ratios=(0.70, 0.15, 0.15), seed: int = 0, groups: Sequence | None = None
) -> DatasetSplit:
    """Shuffle whole experiments into train/val/test.

    With ``groups`` (one label per experiment, e.g. its malware category) the
    shuffled experiments are dealt round-robin across groups before cutting,
    so train receives one member of every group before any group gets a
    second; later splits then only hold groups that train has already seen
    whenever the counts allow it.
    """
    ids = list(dict.fromkeys(int(e) for e in experiment_ids))
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) <= 0:
        raise ValueError(f"ratios {ratios} must be three positive numbers summing to 1")
    if len(ids) < 3:
        raise ValueError(f"need at least 3 experiments to split, got {len(ids)}")
    if groups is not None and len(groups) != len(ids):
        raise ValueError("groups must give one label per experiment")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    if groups is None:
        shuffled = [ids[i] for i in perm]
    else:
        rank: dict = {}
        keyed = []
        for pos, i in enumerate(perm):
            g = groups[i]
            keyed.append((rank.get(g, 0), pos, ids[i]))
            rank[g] = rank.get(g, 0) + 1
        shuffled = [e for _, _, e in sorted(keyed)]
    a, b, _ = split_counts(len(ids), ratios)
    return DatasetSplit(
        tuple(sorted(shuffled[:a])), tuple(sorted(shuffled[a:a + b])), tuple(sorted(shuffled[a + b:])),
        tuple(float(r) for r in ratios), seed,
    )
