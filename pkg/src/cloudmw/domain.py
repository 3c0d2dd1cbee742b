"""Core value types shared by the simulator, feature pipeline and models."""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

DEFAULT_FEATURES = (
    "cpu_user_frac",
    "cpu_system_frac",
    "mem_rss_bytes",
    "mem_virt_bytes",
    "io_read_bytes_s",
    "io_write_bytes_s",
    "io_read_ops_s",
    "io_write_ops_s",
    "thread_count",
    "open_fd_count",
)


class DomainError(ValueError):
    pass


class Label(enum.IntEnum):
    BENIGN = 0
    INFECTED = 1
    INJECTION_WINDOW = 2


ProcessKey = tuple  # (name, cmdline)


@dataclass(frozen=True)
class FeatureSchema:
    names: tuple[str, ...] = DEFAULT_FEATURES

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(names) < 1:
            raise DomainError("feature schema needs at least one feature")
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate feature names in {names}")

    @property
    def count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def digest(self, row_cap: int | None = None) -> str:
        """Stable short hash of the feature names (and matrix row cap, if given)."""
        payload = json.dumps({"names": list(self.names), "row_cap": row_cap})
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


DEFAULT_SCHEMA = FeatureSchema()


@dataclass(frozen=True)
class ExperimentTimeline:
    duration_s: int = 3600
    sample_interval_s: int = 10
    benign_end_s: int = 1800
    malicious_start_s: int = 2400
    injection_t_s: float | None = None

    def __post_init__(self):
        if self.sample_interval_s <= 0:
            raise DomainError("sample interval must be positive")
        if not 0 < self.benign_end_s < self.malicious_start_s <= self.duration_s:
            raise DomainError(
                "need 0 < benign_end_s < malicious_start_s <= duration_s, got "
                f"{self.benign_end_s}, {self.malicious_start_s}, {self.duration_s}"
            )
        if self.duration_s % self.sample_interval_s:
            raise DomainError("duration must be a multiple of the sample interval")
        if self.injection_t_s is not None and not (
            self.benign_end_s <= self.injection_t_s < self.malicious_start_s
        ):
            raise DomainError(f"injection time {self.injection_t_s} outside the injection window")

    @property
    def n_ticks(self) -> int:
        return self.duration_s // self.sample_interval_s

    def tick_times(self) -> range:
        return range(0, self.duration_s, self.sample_interval_s)

    def with_injection(self, t: float) -> "ExperimentTimeline":
        return ExperimentTimeline(
            self.duration_s, self.sample_interval_s, self.benign_end_s, self.malicious_start_s, t
        )


def label_for_time(t: float, tl: ExperimentTimeline) -> Label:
    if not 0 <= t <= tl.duration_s:
        raise DomainError(f"t={t} outside [0, {tl.duration_s}]")
    if t < tl.benign_end_s:
        return Label.BENIGN
    if t >= tl.malicious_start_s:
        return Label.INFECTED
    return Label.INJECTION_WINDOW


@dataclass(frozen=True)
class ProcessRecord:
    name: str
    cmdline: str
    values: tuple[float, ...]

    @property
    def key(self) -> ProcessKey:
        return (self.name, self.cmdline)


@dataclass(frozen=True, eq=False)
class VmSnapshot:
    """All process records of one VM at one tick.

    Records are stored column-wise: ``keys[i]`` names the process whose metric
    vector is ``values[i]``. Duplicate keys are allowed (several OS processes
    sharing a name and command line).
    """

    experiment_id: int
    vm_id: int
    t: float
    keys: tuple[ProcessKey, ...]
    values: np.ndarray
    label: Label

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            values = values.reshape(len(self.keys), -1)
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "keys", tuple(tuple(k) for k in self.keys))
        object.__setattr__(self, "label", Label(self.label))

    @classmethod
    def from_records(cls, experiment_id, vm_id, t, records: Sequence[ProcessRecord], label, n_features=None):
        n_features = n_features if n_features is not None else (len(records[0].values) if records else 0)
        values = np.array([r.values for r in records], dtype=np.float64).reshape(len(records), n_features)
        return cls(experiment_id, vm_id, t, tuple(r.key for r in records), values, label)

    @property
    def processes(self) -> list[ProcessRecord]:
        return [ProcessRecord(k[0], k[1], tuple(float(v) for v in row)) for k, row in zip(self.keys, self.values)]

    def __iter__(self) -> Iterator[ProcessRecord]:
        return iter(self.processes)

    def __eq__(self, other):
        if not isinstance(other, VmSnapshot):
            return NotImplemented
        return (
            self.experiment_id == other.experiment_id
            and self.vm_id == other.vm_id
            and self.t == other.t
            and self.label == other.label
            and self.keys == other.keys
            and self.values.shape == other.values.shape
            and self.values.tobytes() == other.values.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    field: str
    message: str


def validate_snapshot(
    s: VmSnapshot, schema: FeatureSchema = DEFAULT_SCHEMA, timeline: ExperimentTimeline | None = None
) -> list[Violation]:
    """Collect every invariant violation of ``s``; an empty list means well-formed."""
    out: list[Violation] = []
    values = np.asarray(s.values)
    if values.shape[0] != len(s.keys):
        out.append(Violation("keys", f"{len(s.keys)} keys for {values.shape[0]} value rows"))
    if values.size and values.shape[1] != schema.count:
        out.append(Violation("values", f"vector length {values.shape[1]} != {schema.count}"))
    for i, row in enumerate(values):
        bad = [j for j, v in enumerate(row) if not math.isfinite(v)]
        if bad:
            out.append(Violation(f"values[{i}]", f"non-finite entries at {bad}"))
        neg = [j for j, v in enumerate(row) if math.isfinite(v) and v < 0]
        if neg:
            out.append(Violation(f"values[{i}]", f"negative entries at {neg}"))
    if not (math.isfinite(s.t) and s.t >= 0):
        out.append(Violation("t", f"t={s.t} must be finite and >= 0"))
    elif timeline is not None:
        if s.t % timeline.sample_interval_s:
            out.append(Violation("t", f"t={s.t} not a multiple of {timeline.sample_interval_s}"))
        if s.t <= timeline.duration_s and s.label != label_for_time(s.t, timeline):
            out.append(Violation("label", f"{s.label.name} inconsistent with t={s.t}"))
    return out
