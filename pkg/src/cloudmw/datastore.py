"""Bit-exact persistence for datasets, manifests and trained models.

Binary dataset (``.cmwd``), all integers and floats little-endian::

    magic      8 bytes  b"CMWDSET\\0"
    version    u16
    hdr_len    u32
    header     hdr_len bytes of UTF-8 JSON (schema, timeline, row cap,
               per-experiment snapshot counts, process-key table)
    records    per snapshot: u32 experiment_id, u32 vm_id, f64 t, u8 label,
               u32 n, then n u32 key indices, then n*F f64 values (row-major)
    trailer    b"CMWEND\\0\\0" + u64 snapshot count

Text dataset (``.csv``): ``#``-prefixed JSON header line, then one ``S`` row
per snapshot (``S,experiment_id,vm_id,t,label,n``) followed by its ``n``
process rows (``P,name,cmdline,v1..vF``). Floats are written with ``repr`` so
they parse back to the identical double.

Model file (``.cmwm``)::

    magic b"CMWMODL\\0", u16 version, u32 hdr_len, JSON header (kind, schema
    hash, feature names, row cap, hyperparameters), then an ``.npz`` payload
    holding the scaler bounds and every model array.
"""

from __future__ import annotations

import csv
import io
import json
import os
import shutil
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .domain import DEFAULT_SCHEMA, ExperimentTimeline, FeatureSchema, Label, VmSnapshot
from .features import DEFAULT_ROW_CAP, Scaler, apply_scaler
from .models import MODEL_KINDS, Classifier

DATASET_MAGIC = b"CMWDSET\x00"
MODEL_MAGIC = b"CMWMODL\x00"
TEXT_TRAILER = "#CMWEND"
TRAILER = b"CMWEND\x00\x00"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sHI")
_REC = struct.Struct("<IIdBI")
_TRAIL = struct.Struct("<8sQ")


class DatastoreError(Exception):
    pass


class FormatError(DatastoreError):
    """Bad magic bytes or unsupported format version."""


class TruncatedError(DatastoreError):
    pass


class SchemaError(DatastoreError):
    pass


class KindMismatchError(DatastoreError):
    pass


class ManifestError(DatastoreError):
    pass


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode())


# ---------------------------------------------------------------------------
# datasets


@dataclass
class DatasetFile:
    header: dict
    snapshots: list[VmSnapshot]

    def __iter__(self) -> Iterator[VmSnapshot]:
        return iter(self.snapshots)

    def __len__(self):
        return len(self.snapshots)

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema(tuple(self.header["schema"]))

    @property
    def row_cap(self) -> int:
        return int(self.header["row_cap"])


def _timeline_dict(tl: ExperimentTimeline | None):
    if tl is None:
        return None
    return {"duration_s": tl.duration_s, "sample_interval_s": tl.sample_interval_s,
            "benign_end_s": tl.benign_end_s, "malicious_start_s": tl.malicious_start_s}


def _text_mode(path, mode):
    if mode is not None:
        if mode not in ("binary", "text"):
            raise ValueError(f"mode must be 'binary' or 'text', not {mode!r}")
        return mode == "text"
    return Path(path).suffix.lower() in (".csv", ".txt", ".tsv")


def write_dataset(
    snapshots: Iterable[VmSnapshot],
    path: str | os.PathLike,
    schema: FeatureSchema = DEFAULT_SCHEMA,
    timeline: ExperimentTimeline | None = None,
    row_cap: int = DEFAULT_ROW_CAP,
    mode: str | None = None,
    extra: dict | None = None,
) -> dict:
    """Stream ``snapshots`` to ``path`` (written atomically) and return the header."""
    path = Path(path)
    text = _text_mode(path, mode)
    F = schema.count
    keys: dict[tuple, int] = {}
    counts: dict[int, int] = {}
    n_snap = 0
    tmpdir = tempfile.mkdtemp(dir=path.parent, prefix=".cmw-")
    body_path = Path(tmpdir) / "body"
    try:
        with open(body_path, "w", newline="") if text else open(body_path, "wb") as body:
            writer = csv.writer(body, lineterminator="\n") if text else None
            for s in snapshots:
                vals = np.asarray(s.values, dtype="<f8")
                if vals.size and vals.shape[1] != F:
                    raise SchemaError(f"snapshot has {vals.shape[1]} features, schema has {F}")
                n = len(s.keys)
                counts[s.experiment_id] = counts.get(s.experiment_id, 0) + 1
                n_snap += 1
                if text:
                    writer.writerow(["S", s.experiment_id, s.vm_id, repr(float(s.t)), int(s.label), n])
                    for k, row in zip(s.keys, vals):
                        writer.writerow(["P", json.dumps(k[0]), json.dumps(k[1]), *(repr(float(v)) for v in row)])
                else:
                    idx = np.array([keys.setdefault(k, len(keys)) for k in s.keys], dtype="<u4")
                    body.write(_REC.pack(s.experiment_id, s.vm_id, float(s.t), int(s.label), n))
                    body.write(idx.tobytes())
                    body.write(vals.reshape(n, F).tobytes())
        header = {
            "format_version": FORMAT_VERSION,
            "schema": list(schema.names),
            "schema_hash": schema.digest(row_cap),
            "timeline": _timeline_dict(timeline),
            "row_cap": row_cap,
            "experiment_count": len(counts),
            "snapshot_count": n_snap,
            "experiments": {str(k): v for k, v in sorted(counts.items())},
            "endianness": "little",
            **(extra or {}),
        }
        final_tmp = Path(tmpdir) / "final"
        if text:
            with open(final_tmp, "w", newline="") as out, open(body_path) as body:
                out.write("#CMWDSET " + json.dumps(header, sort_keys=True) + "\n")
                shutil.copyfileobj(body, out)
                out.write(f"{TEXT_TRAILER} {n_snap}\n")
        else:
            header["keys"] = [list(k) for k in keys]
            hdr = json.dumps(header, sort_keys=True).encode()
            with open(final_tmp, "wb") as out, open(body_path, "rb") as body:
                out.write(_PREFIX.pack(DATASET_MAGIC, FORMAT_VERSION, len(hdr)))
                out.write(hdr)
                shutil.copyfileobj(body, out)
                out.write(_TRAIL.pack(TRAILER, n_snap))
            header.pop("keys")
        os.replace(final_tmp, path)
    finally:
        shutil.rmtree(tmpdir, ignore_errors=True)
    return header


def _check_schema(header: dict, expect: FeatureSchema | None):
    if expect is not None and tuple(header["schema"]) != expect.names:
        raise SchemaError(f"file has {len(header['schema'])} features {header['schema']}, expected {list(expect.names)}")


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedError(f"file ends inside {what} (wanted {n} bytes, got {len(buf)})")
    return buf


def read_header(path: str | os.PathLike, mode: str | None = None) -> dict:
    if _text_mode(path, mode):
        with open(path, newline="") as fh:
            first = fh.readline()
        if not first.startswith("#CMWDSET "):
            raise FormatError(f"{path}: not a text dataset (bad header magic)")
        if not first.endswith("\n"):
            raise TruncatedError(f"{path}: file ends inside the header line")
        try:
            header = json.loads(first[len("#CMWDSET "):])
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: corrupt header: {exc}") from exc
    else:
        with open(path, "rb") as fh:
            header = _read_binary_header(fh, path)
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {header.get('format_version')}")
    return header


def _read_binary_header(fh, path) -> dict:
    raw = fh.read(_PREFIX.size)
    if len(raw) < len(DATASET_MAGIC) or raw[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a binary dataset")
    if len(raw) != _PREFIX.size:
        raise TruncatedError(f"{path}: file ends inside the prefix")
    _, version, hlen = _PREFIX.unpack(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    try:
        return json.loads(_read_exact(fh, hlen, "header"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: corrupt header: {exc}") from exc


def iter_dataset(path: str | os.PathLike, expect_schema: FeatureSchema | None = None, mode: str | None = None):
    """Yield ``(header, snapshot)`` pairs; the header object is shared."""
    if _text_mode(path, mode):
        yield from _iter_text(path, expect_schema)
    else:
        yield from _iter_binary(path, expect_schema)


def _iter_binary(path, expect_schema):
    with open(path, "rb") as fh:
        header = _read_binary_header(fh, path)
        _check_schema(header, expect_schema)
        F = len(header["schema"])
        keys = [tuple(k) for k in header["keys"]]
        for _ in range(int(header["snapshot_count"])):
            eid, vm, t, label, n = _REC.unpack(_read_exact(fh, _REC.size, "a record"))
            idx = np.frombuffer(_read_exact(fh, 4 * n, "key indices"), dtype="<u4")
            vals = np.frombuffer(_read_exact(fh, 8 * n * F, "values"), dtype="<f8").reshape(n, F).astype(np.float64)
            try:
                rec_keys = tuple(keys[i] for i in idx)
            except IndexError:
                raise FormatError(f"{path}: key index out of range") from None
            yield header, VmSnapshot(eid, vm, t, rec_keys, vals, Label(label))
        trail = _read_exact(fh, _TRAIL.size, "the trailer")
        magic, count = _TRAIL.unpack(trail)
        if magic != TRAILER or count != header["snapshot_count"]:
            raise FormatError(f"{path}: trailer mismatch")


def _iter_text(path, expect_schema):
    header = read_header(path, "text")
    _check_schema(header, expect_schema)
    F = len(header["schema"])
    expected_tail = f"{TEXT_TRAILER} {header['snapshot_count']}\n".encode()
    with open(path, "rb") as fh:
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
        fh.seek(max(0, size - len(expected_tail) - 1))
        tail = fh.read()
    if not tail.endswith(b"\n" + expected_tail):
        raise TruncatedError(f"{path}: missing end marker, file is truncated")
    with open(path, newline="") as fh:
        fh.readline()
        reader = csv.reader(fh)
        seen = 0
        for row in reader:
            if row and row[0].startswith(TEXT_TRAILER):
                break
            if not row or row[0] != "S":
                raise FormatError(f"{path}:{reader.line_num}: expected a snapshot row")
            eid, vm, t, label, n = int(row[1]), int(row[2]), float(row[3]), int(row[4]), int(row[5])
            keys, vals = [], np.zeros((n, F))
            for i in range(n):
                try:
                    p = next(reader)
                except StopIteration:
                    raise TruncatedError(f"{path}: file ends inside a snapshot") from None
                if p[0] != "P" or len(p) != 3 + F:
                    raise SchemaError(f"{path}:{reader.line_num}: process row with {len(p) - 3} values, expected {F}")
                try:
                    keys.append((json.loads(p[1]), json.loads(p[2])))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{reader.line_num}: bad process key") from exc
                vals[i] = [float(v) for v in p[3:]]
            seen += 1
            yield header, VmSnapshot(eid, vm, t, tuple(keys), vals, Label(label))
        if seen != header["snapshot_count"]:
            raise TruncatedError(f"{path}: {seen} snapshots, header promises {header['snapshot_count']}")


def read_dataset(path: str | os.PathLike, expect_schema: FeatureSchema | None = None, mode: str | None = None) -> DatasetFile:
    header, snaps = None, []
    for header, s in iter_dataset(path, expect_schema, mode):
        snaps.append(s)
    if header is None:
        header = read_header(path, mode)
        _check_schema(header, expect_schema)
    counts: dict[str, int] = {}
    for s in snaps:
        counts[str(s.experiment_id)] = counts.get(str(s.experiment_id), 0) + 1
    if counts != header.get("experiments", counts):
        raise FormatError(f"{path}: per-experiment counts disagree with the header")
    header = {k: v for k, v in header.items() if k != "keys"}
    return DatasetFile(header, snaps)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    id: int
    seed: int
    profile: dict | None
    injection_t_s: float
    snapshot_count: int


@dataclass
class Manifest:
    experiments: list[ManifestEntry]
    config: dict = field(default_factory=dict)
    base_seed: int | None = None

    def __post_init__(self):
        ids = [e.id for e in self.experiments]
        if len(set(ids)) != len(ids):
            raise ManifestError("duplicate experiment ids in manifest")

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.experiments]

    def to_dict(self):
        return {"format_version": FORMAT_VERSION, "base_seed": self.base_seed, "config": self.config,
                "experiments": [e.__dict__ for e in self.experiments]}

    def reconcile(self, header: dict) -> None:
        """Raise unless every experiment's snapshot count matches the dataset header."""
        want = {str(e.id): e.snapshot_count for e in self.experiments}
        have = header.get("experiments", {})
        if want != have:
            raise ManifestError(f"manifest counts {want} do not match dataset counts {have}")


def write_manifest(m: Manifest, path) -> None:
    atomic_write_text(path, json.dumps(m.to_dict(), indent=2) + "\n")


def read_manifest(path) -> Manifest:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported manifest version")
    return Manifest([ManifestEntry(**e) for e in d["experiments"]], d.get("config", {}), d.get("base_seed"))


# ---------------------------------------------------------------------------
# models


@dataclass
class TrainedModel:
    """A fitted classifier plus the scaler and matrix geometry it expects."""

    model: Classifier
    scaler: Scaler | None
    schema: FeatureSchema = DEFAULT_SCHEMA
    row_cap: int = DEFAULT_ROW_CAP
    meta: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.model.kind

    @property
    def schema_hash(self) -> str:
        return self.schema.digest(self.row_cap)

    def prepare(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-2:] != (self.row_cap, self.schema.count):
            raise SchemaError(f"matrices shaped {X.shape[-2:]}, model expects {(self.row_cap, self.schema.count)}")
        return apply_scaler(self.scaler, X) if self.scaler is not None else X

    def score(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 2
        out = self.model.score(self.prepare(X[None] if single else X))
        return out

    def predict(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.score(X) >= threshold).astype(np.int64)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def save_model(tm: TrainedModel, path: str | os.PathLike) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": tm.kind,
        "schema": list(tm.schema.names),
        "schema_hash": tm.schema_hash,
        "row_cap": tm.row_cap,
        "hyperparams": {k: _jsonable(v) for k, v in tm.model.hyperparams().items()},
        "meta": tm.meta,
    }
    arrays = {f"m/{k}": np.asarray(v) for k, v in tm.model.arrays().items()}
    if tm.scaler is not None:
        arrays["scaler/lo"], arrays["scaler/hi"] = tm.scaler.lo, tm.scaler.hi
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    hdr = json.dumps(header, sort_keys=True).encode()
    atomic_write_bytes(path, _PREFIX.pack(MODEL_MAGIC, FORMAT_VERSION, len(hdr)) + hdr + buf.getvalue())


def read_model_header(path) -> dict:
    with open(path, "rb") as fh:
        raw = fh.read(_PREFIX.size)
        if raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
            raise FormatError(f"{path}: bad magic bytes, not a model file")
        if len(raw) != _PREFIX.size:
            raise TruncatedError(f"{path}: file ends inside the prefix")
        _, version, hlen = _PREFIX.unpack(raw)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported model format version {version}")
        return json.loads(_read_exact(fh, hlen, "header"))


def load_model(path: str | os.PathLike, expected_kind: str | None = None, schema_hash: str | None = None) -> TrainedModel:
    header = read_model_header(path)
    kind = header["kind"]
    if expected_kind is not None and kind != expected_kind:
        raise KindMismatchError(f"{path} holds a {kind!r} model, expected {expected_kind!r}")
    if schema_hash is not None and header["schema_hash"] != schema_hash:
        raise SchemaError(f"{path} was trained for schema {header['schema_hash']}, data has {schema_hash}")
    if kind not in MODEL_KINDS:
        raise FormatError(f"{path}: unknown model kind {kind!r}")
    with open(path, "rb") as fh:
        fh.seek(_PREFIX.size + len(json.dumps(header, sort_keys=True).encode()))
        payload = fh.read()
    try:
        with np.load(io.BytesIO(payload), allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except Exception as exc:  # zipfile/np errors on damaged payloads
        raise TruncatedError(f"{path}: unreadable model payload ({exc})") from exc
    model_arrays = {k[2:]: v for k, v in arrays.items() if k.startswith("m/")}
    model = MODEL_KINDS[kind].from_state(header["hyperparams"], model_arrays)
    scaler = Scaler(arrays["scaler/lo"], arrays["scaler/hi"]) if "scaler/lo" in arrays else None
    schema = FeatureSchema(tuple(header["schema"]))
    tm = TrainedModel(model, scaler, schema, int(header["row_cap"]), header.get("meta", {}))
    if tm.schema_hash != header["schema_hash"]:
        raise SchemaError(f"{path}: stored schema hash does not match its feature list")
    return tm


# ---------------------------------------------------------------------------
# JSON-lines snapshot streams (one snapshot per line, used by ``detect``)


class RecordError(DatastoreError):
    """One malformed line in a snapshot stream."""


def snapshot_to_json(s: VmSnapshot) -> str:
    return json.dumps({
        "experiment_id": s.experiment_id,
        "vm_id": s.vm_id,
        "t": float(s.t),
        "label": s.label.name,
        "processes": [{"name": k[0], "cmdline": k[1], "values": [float(v) for v in row]}
                      for k, row in zip(s.keys, np.asarray(s.values).reshape(len(s.keys), -1))],
    })


def snapshot_from_json(line: str, schema: FeatureSchema = DEFAULT_SCHEMA) -> VmSnapshot:
    """Parse one line; ``label`` is optional (unlabeled live data reads as benign)."""
    try:
        d = json.loads(line)
        procs = d["processes"]
        keys = tuple((str(p["name"]), str(p["cmdline"])) for p in procs)
        vals = np.array([p["values"] for p in procs], dtype=np.float64).reshape(len(procs), -1) if procs \
            else np.zeros((0, schema.count))
        label = Label[d.get("label", "BENIGN")]
        t = float(d["t"])
        eid, vm = int(d.get("experiment_id", 0)), int(d.get("vm_id", 0))
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise RecordError(f"malformed snapshot record: {exc!r}") from exc
    if vals.shape[1] != schema.count:
        raise SchemaError(f"record has {vals.shape[1]} features, schema has {schema.count}")
    if not np.isfinite(vals).all() or (vals < 0).any():
        raise RecordError("feature values must be finite and non-negative")
    return VmSnapshot(eid, vm, t, keys, vals, label)


def write_jsonl(snapshots: Iterable[VmSnapshot], path) -> int:
    n = 0
    buf = io.StringIO()
    for s in snapshots:
        buf.write(snapshot_to_json(s) + "\n")
        n += 1
    atomic_write_text(path, buf.getvalue())
    return n
