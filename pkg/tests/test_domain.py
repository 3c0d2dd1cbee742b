import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cloudmw.domain import (
    DEFAULT_SCHEMA,
    DomainError,
    ExperimentTimeline,
    FeatureSchema,
    Label,
    ProcessRecord,
    VmSnapshot,
    label_for_time,
    validate_snapshot,
)

from conftest import make_snapshot

TL = ExperimentTimeline()


def test_schema_defaults():
    assert DEFAULT_SCHEMA.count == 10
    assert DEFAULT_SCHEMA.index("cpu_user_frac") == 0
    assert len(DEFAULT_SCHEMA.digest()) == 16


@pytest.mark.parametrize("names", [(), ("a", "b", "a")])
def test_schema_rejects_bad_names(names):
    with pytest.raises(DomainError):
        FeatureSchema(names)


def test_schema_digest_depends_on_names_and_rows():
    a = FeatureSchema(("x", "y"))
    assert a.digest(128) == FeatureSchema(("x", "y")).digest(128)
    assert a.digest(128) != a.digest(64)
    assert a.digest(128) != FeatureSchema(("y", "x")).digest(128)


@pytest.mark.parametrize(
    "t, expected",
    [
        (0, Label.BENIGN),
        (1790, Label.BENIGN),
        (1800, Label.INJECTION_WINDOW),
        (2390, Label.INJECTION_WINDOW),
        (2400, Label.INFECTED),
        (3590, Label.INFECTED),
        (3600, Label.INFECTED),
    ],
)
def test_label_for_time_boundaries(t, expected):
    assert label_for_time(t, TL) == expected


@pytest.mark.parametrize("t", [-10, 3610, math.inf])
def test_label_for_time_out_of_range(t):
    with pytest.raises(DomainError):
        label_for_time(t, TL)


def test_default_timeline_label_counts():
    labels = [label_for_time(t, TL) for t in TL.tick_times()]
    assert TL.n_ticks == 360
    assert labels.count(Label.BENIGN) == 180
    assert labels.count(Label.INJECTION_WINDOW) == 60
    assert labels.count(Label.INFECTED) == 120


@given(st.floats(0, 3600), st.floats(0, 3600))
def test_labels_never_go_backwards(a, b):
    # benign, then the injection window, then infected
    order = {Label.BENIGN: 0, Label.INJECTION_WINDOW: 1, Label.INFECTED: 2}
    lo, hi = min(a, b), max(a, b)
    assert order[label_for_time(lo, TL)] <= order[label_for_time(hi, TL)]


@pytest.mark.parametrize(
    "kw",
    [
        dict(benign_end_s=0),
        dict(benign_end_s=2400, malicious_start_s=2400),
        dict(malicious_start_s=4000),
        dict(duration_s=3605),
        dict(sample_interval_s=0),
        dict(injection_t_s=2400.0),
        dict(injection_t_s=1799.0),
    ],
)
def test_timeline_invariants(kw):
    with pytest.raises(DomainError):
        ExperimentTimeline(**kw)


def test_with_injection_keeps_bounds():
    tl = TL.with_injection(1800.0)
    assert tl.injection_t_s == 1800.0
    assert (tl.duration_s, tl.benign_end_s, tl.malicious_start_s) == (3600, 1800, 2400)


def test_snapshot_records_round_trip():
    recs = [ProcessRecord("a", "x", (1.0, 2.0)), ProcessRecord("b", "", (0.0, 0.5))]
    s = VmSnapshot.from_records(1, 2, 30.0, recs, Label.BENIGN)
    assert s.processes == recs
    assert s.values.shape == (2, 2)
    assert not s.values.flags.writeable


def test_snapshot_equality_is_bitwise():
    a = make_snapshot([("a", "")], [[0.1, 0.2]])
    b = make_snapshot([("a", "")], [[0.1, 0.2]])
    c = make_snapshot([("a", "")], [[0.1, np.nextafter(0.2, 1.0)]])
    assert a == b
    assert a != c


def test_validate_clean_snapshot():
    s = make_snapshot([("a", "x")] * 2, np.ones((2, 10)), t=2400.0, label=Label.INFECTED)
    assert validate_snapshot(s, DEFAULT_SCHEMA, TL) == []


def test_validate_reports_each_problem():
    vals = np.ones((2, 10))
    vals[0, 3] = -1.0
    vals[1, 0] = np.nan
    s = make_snapshot([("a", "x"), ("b", "y")], vals, t=15.0, label=Label.INFECTED)
    fields = [v.field for v in validate_snapshot(s, DEFAULT_SCHEMA, TL)]
    assert fields == ["values[0]", "values[1]", "t", "label"]


def test_validate_wrong_width():
    s = make_snapshot([("a", "x")], np.ones((1, 8)))
    assert [v.field for v in validate_snapshot(s)] == ["values"]
