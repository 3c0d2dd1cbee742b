import csv
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cloudmw.eval import (
    ConfusionMatrix,
    ModelResult,
    TimingReport,
    evaluate_scores,
    f1_score,
    metrics,
    report,
    results_from_summary,
    roc,
    time_model,
)


@pytest.mark.parametrize("p, r, f1", [(0.862, 0.8091, 0.8347), (0.4806, 0.9857, 0.6461)])
def test_f1_reproduces_published_pairs(p, r, f1):
    assert abs(f1_score(p, r) - f1) <= 0.0005


def test_metrics_against_fraction_oracle():
    cm = ConfusionMatrix(tp=8, tn=5, fp=2, fn=1)
    m = metrics(cm)
    p, r = Fraction(8, 10), Fraction(8, 9)
    assert m.accuracy == float(Fraction(13, 16))
    assert m.precision == float(p)
    assert m.recall == pytest.approx(float(r), rel=1e-15)
    assert m.f1 == pytest.approx(float(2 * p * r / (p + r)), rel=1e-15)
    assert m.undefined == ()


def test_zero_denominators_are_flagged():
    m = metrics(ConfusionMatrix(tp=0, tn=10, fp=0, fn=5))
    assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
    assert m.undefined == ("precision", "f1")
    assert metrics(ConfusionMatrix(0, 4, 0, 0)).undefined == ("precision", "recall", "f1")
    with pytest.raises(ValueError):
        metrics(ConfusionMatrix(0, 0, 0, 0))
    with pytest.raises(ValueError):
        ConfusionMatrix(-1, 0, 0, 0)


def test_confusion_from_predictions():
    cm = ConfusionMatrix.from_predictions([1, 1, 0, 0, 1], [1, 0, 0, 1, 1])
    assert (cm.tp, cm.tn, cm.fp, cm.fn) == (2, 1, 1, 1)


def mann_whitney_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


@given(st.lists(st.tuples(st.integers(0, 20).map(lambda v: v / 20), st.booleans()), min_size=2, max_size=300))
def test_auc_matches_mann_whitney(pairs):
    scores = [s for s, _ in pairs]
    labels = [y for _, y in pairs]
    if all(labels) or not any(labels):
        with pytest.raises(ValueError):
            roc(scores, labels)
        return
    assert roc(scores, labels).auc == pytest.approx(mann_whitney_auc(scores, labels), abs=1e-9)


def test_auc_matches_mann_whitney_at_2000(rng):
    scores = np.round(rng.random(2000), 2)
    labels = rng.random(2000) < scores
    auc = roc(scores, labels).auc
    pos, neg = scores[labels], scores[~labels]
    ref = ((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (len(pos) * len(neg))
    assert abs(auc - ref) <= 1e-9


def test_roc_shape():
    c = roc([0.9, 0.8, 0.8, 0.3, 0.1], [1, 1, 0, 0, 0])
    assert (c.fpr[0], c.tpr[0], c.thresholds[0]) == (0.0, 0.0, np.inf)
    assert (c.fpr[-1], c.tpr[-1]) == (1.0, 1.0)
    assert (np.diff(c.fpr) >= 0).all() and (np.diff(c.tpr) >= 0).all()
    assert c.thresholds[1:].tolist() == [0.9, 0.8, 0.3, 0.1]
    assert c.auc == pytest.approx(1 - 0.5 / 6)


@pytest.mark.parametrize("scores, auc", [([0.1, 0.2, 0.8, 0.9], 1.0), ([0.9, 0.8, 0.2, 0.1], 0.0), ([0.5] * 4, 0.5)])
def test_roc_extremes(scores, auc):
    assert roc(scores, [0, 0, 1, 1]).auc == auc


def test_time_model_reports_spread():
    X = np.zeros((5, 3))
    rep = time_model(lambda: sum(range(20000)), lambda x: x.sum(), X, runs=3, min_samples=50)
    assert rep.runs == 3 and rep.n_scored == 50
    assert rep.train_time_s > 0 and rep.detect_time_ms > 0
    assert rep.train_time_std_s >= 0 and rep.detect_time_std_ms >= 0
    given_times = time_model(None, lambda x: x.sum(), X, runs=3, train_times=[1.0, 2.0, 3.0])
    assert given_times.train_time_s == 2.0 and given_times.train_time_std_s == 1.0
    with pytest.raises(ValueError):
        time_model(None, lambda x: x, np.zeros((0, 3)))


def test_time_model_scores_one_sample_at_a_time():
    seen = []
    time_model(None, lambda x: seen.append(x.shape), np.zeros((4, 2, 3)), runs=1, min_samples=6)
    assert set(seen) == {(1, 2, 3)}
    assert len(seen) == 7  # warm-up plus six timed calls


def test_evaluate_scores_flags():
    r = evaluate_scores("X", [0.1, 0.2], [0, 0])
    assert r.roc is None and any(f.startswith("no-roc") for f in r.flags)
    assert "undefined:precision,recall,f1" in r.flags


def test_report_files_and_round_trip(tmp_path, rng):
    results = []
    for name in ["CNN", "SVC", "RFC", "KNN", "GBC", "GNB"]:
        y = rng.integers(0, 2, 50)
        r = evaluate_scores(name, rng.random(50), y)
        r.timing = TimingReport(1.5, 0.25, 0.1, 0.01, 3, 100)
        results.append(r)
    out = report(results, tmp_path)
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == sorted(["metrics.txt", "metrics.csv", "timing.txt", "timing.csv", "report.json"]
                           + [f"roc_{n.lower()}.csv" for n in ["cnn", "svc", "rfc", "knn", "gbc", "gnb"]])
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0][:5] == ["Model", "Accuracy", "Precision", "Recall", "F1"]
    assert len(rows) == 7
    assert len(list(csv.reader(open(tmp_path / "timing.csv")))) == 7
    assert "CNN" in out["text"]
    back = results_from_summary(json.loads((tmp_path / "report.json").read_text()), tmp_path)
    for a, b in zip(results, back):
        assert a.metrics == b.metrics
        assert a.timing == b.timing
        np.testing.assert_array_equal(a.roc.fpr, b.roc.fpr)
        np.testing.assert_array_equal(a.roc.thresholds, b.roc.thresholds)
        assert a.roc.auc == b.roc.auc


def test_report_needs_results(tmp_path):
    with pytest.raises(ValueError):
        report([], tmp_path)
    report([ModelResult("empty")], tmp_path)
    assert "empty" in (tmp_path / "metrics.txt").read_text()
