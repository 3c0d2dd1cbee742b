"""Acceptance checks; each test prints one PASS/FAIL line."""

import time

import numpy as np
import pytest

from cloudmw import datastore as ds
from cloudmw.domain import DEFAULT_SCHEMA, ProcessRecord
from cloudmw.eval import f1_score, roc
from cloudmw.features import aggregate_unique, fit_scaler
from cloudmw.models import CnnConfig, DenseNet, GaussianNaiveBayes, KNearestNeighbors, early_stop, make_model
from cloudmw.models.cnn import block_channels
from cloudmw.models.trees import DecisionTree, RandomForest
from cloudmw.pipeline import run, simulate_batch
from cloudmw.simulator import AutoscalePolicy, SimConfig, pareto_samples, run_experiment

from conftest import ACCEPTANCE_LINES
from test_cnn import numeric_grad, rel_err
from test_features import groupby_mean_oracle
from test_models import gnb_oracle, knn_oracle


def verdict(n, ok, detail):
    line = f"ACCEPTANCE {n}: {'PASS' if ok else 'FAIL'} {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, detail


def test_1_f1_identities():
    pairs = [(0.862, 0.8091, 0.8347), (0.4806, 0.9857, 0.6461)]
    gaps = [abs(f1_score(p, r) - f) * 100 for p, r, f in pairs]
    verdict(1, max(gaps) <= 0.05, f"F1 identities, worst gap {max(gaps):.4f} pp (tol 0.05)")


def test_2_record_counts():
    t0 = time.perf_counter()
    stream, manifest = simulate_batch(SimConfig(), 113, 0)
    full = sum(1 for _ in stream)
    single = len(list(run_experiment(SimConfig(), 0)))
    ok = full == 40_680 and single == 360 and len(manifest.experiments) == 113
    verdict(2, ok, f"records N=113 -> {full}, N=1 -> {single} ({time.perf_counter() - t0:.0f}s)")


def test_3_oracles():
    rng = np.random.default_rng(11)
    Xtr = rng.integers(-3, 4, size=(60, 4)).astype(float)
    ytr = np.arange(60) % 2
    Q = rng.integers(-3, 4, size=(15, 4)).astype(float)
    knn = KNearestNeighbors(k=5).fit(Xtr, ytr)
    knn_ok = all(knn.neighbors(Q[i:i + 1])[0].tolist() == ref for i, (ref, _) in enumerate(knn_oracle(Xtr, ytr, Q, 5)))

    X = rng.normal(size=(50, 4)) * [0.3, 1, 4, 2]
    y = (np.arange(50) < 20).astype(int)
    gnb_err = float(np.max(np.abs(GaussianNaiveBayes().fit(X, y).log_posterior(Q) - gnb_oracle(X, y, Q))))

    auc_err = 0.0
    for n in (50, 2000):
        s = np.round(rng.random(n), 2)
        lab = rng.integers(0, 2, n)
        pos, neg = s[lab == 1], s[lab == 0]
        mw = (np.sum(pos[:, None] > neg[None, :]) + 0.5 * np.sum(pos[:, None] == neg[None, :])) / (len(pos) * len(neg))
        auc_err = max(auc_err, abs(roc(s, lab).auc - mw))

    Xf = rng.normal(size=(80, 5))
    yf = (Xf[:, 0] + 0.5 * rng.normal(size=80) > 0).astype(int)
    tree = DecisionTree(max_depth=6, min_samples_leaf=2).fit(Xf, yf)
    rf = RandomForest(n_trees=1, max_depth=6, min_samples_leaf=2, max_features=None, bootstrap=False, seed=1).fit(Xf, yf)
    Qf = rng.normal(size=(200, 5))
    rf_ok = bool(np.array_equal(rf.predict(Qf), tree.predict(Qf)))

    recs = [ProcessRecord(str(rng.integers(0, 5)), "", tuple(rng.random(3) * 1e6)) for _ in range(300)]
    oracle = groupby_mean_oracle(recs)
    agg_err = max(float(np.max(np.abs(r.values - oracle[r.key][0]) / np.maximum(np.abs(oracle[r.key][0]), 1e-300)))
                  for r in aggregate_unique(recs))

    ok = knn_ok and gnb_err <= 1e-9 and auc_err <= 1e-9 and rf_ok and agg_err <= 1e-12
    verdict(3, ok, f"oracles knn_exact={knn_ok} gnb={gnb_err:.1e} auc={auc_err:.1e} rf1==tree={rf_ok} agg={agg_err:.1e}")


def test_4_cnn_gradients_and_rules():
    cfg = CnnConfig(init_channels=4, blocks=2, layers_per_block=2, growth=3, dtype="float64")
    net = DenseNet(cfg, zero_head=False)
    rng = np.random.default_rng(8)
    x, y = rng.random((1, 8, 8)), np.array([1])
    _, grads = net.loss_and_grads(x, y)
    grads = {k: v.copy() for k, v in grads.items()}
    loss = lambda: net.loss_and_grads(x, y)[0]  # noqa: E731
    worst = max(rel_err(grads[k], numeric_grad(loss, p)) for k, p in net.params.items())
    chans = block_channels(CnnConfig(init_channels=6, blocks=3, layers_per_block=4, growth=5))
    law = all(cout == cin + 4 * 5 for cin, cout in chans) and all(chans[i + 1][0] == chans[i][1] // 2 for i in range(2))
    stop = early_stop([0.5, 0.7, 0.6, 0.65], 2) == (True, 1) and early_stop([0.5, 0.7, 0.6, 0.8], 2) == (False, 3)
    verdict(4, worst < 1e-4 and law and stop, f"cnn grad rel err {worst:.1e} (tol 1e-4) channel_law={law} early_stop={stop}")


@pytest.fixture(scope="module")
def desk_runs():
    t0 = time.perf_counter()
    out = {i: run(n=10, seed=0, intensity=i) for i in (1.0, 0.0)}
    return out, time.perf_counter() - t0


def test_5_signal_and_null(desk_runs):
    runs, elapsed = desk_runs
    hi = {r.model: r.roc.auc for r in runs[1.0].results}
    lo = {r.model: r.roc.auc for r in runs[0.0].results}
    ok = min(hi.values()) >= 0.95 and all(0.40 <= a <= 0.60 for a in lo.values()) and elapsed < 600
    fmt = lambda d: " ".join(f"{k}={v:.3f}" for k, v in d.items())  # noqa: E731
    verdict(5, ok, f"N=10 AUC@1 [{fmt(hi)}] AUC@0 [{fmt(lo)}] in {elapsed:.0f}s")


def test_6_simulator_laws():
    policy = AutoscalePolicy()
    tiers_ok = actions_ok = True
    for seed in range(3):
        trace = []
        list(run_experiment(SimConfig(), seed, trace=trace))
        ticks = [row for row in trace if isinstance(row[0], (int, float))]
        tiers_ok &= all(2 <= web <= 10 and 2 <= app <= 10 for _, web, app, _, _ in ticks)
        for _, _, cpu, action, size in trace[-1][1]:
            actions_ok &= ((action == 1 and cpu > policy.cpu_high) or (action == -1 and cpu < policy.cpu_low)) and 2 <= size <= 10
    n, shape, xm = 1_000_000, 2.5, 20.0
    x = pareto_samples(shape, xm, n, np.random.default_rng(7))
    se = np.sqrt(xm**2 * shape / ((shape - 1) ** 2 * (shape - 2)) / n)
    z = abs(x.mean() - shape * xm / (shape - 1)) / se
    same = list(run_experiment(SimConfig(), 42)) == list(run_experiment(SimConfig(), 42))
    ok = tiers_ok and actions_ok and z < 3 and same
    verdict(6, ok, f"tiers_in_range={tiers_ok} actions_cross_thresholds={actions_ok} pareto_z={z:.2f} bit_identical={same}")


def test_7_persistence(tmp_path):
    snaps = list(run_experiment(SimConfig(), 3))
    exact = True
    for suffix in (".cmwd", ".csv"):
        ds.write_dataset(snaps, tmp_path / f"d{suffix}")
        exact &= ds.read_dataset(tmp_path / f"d{suffix}").snapshots == snaps
    rng = np.random.default_rng(0)
    X, Q = rng.random((100, 8, 10)), rng.random((50, 8, 10))
    y = np.arange(100) % 2
    tm = ds.TrainedModel(make_model("rf", n_trees=10).fit(X, y), fit_scaler(X), DEFAULT_SCHEMA, 8)
    ds.save_model(tm, tmp_path / "rf.cmwm")
    back = ds.load_model(tmp_path / "rf.cmwm", expected_kind="rf")
    exact &= back.score(Q).tobytes() == tm.score(Q).tobytes()
    try:
        ds.load_model(tmp_path / "rf.cmwm", expected_kind="svc")
        rejected = False
    except ds.KindMismatchError:
        rejected = True
    verdict(7, exact and rejected, f"bit_exact_round_trips={exact} cross_kind_rejected={rejected}")


def test_8_timing():
    res = run(n=3, seed=0, kinds=("gnb", "cnn"), hyperparams={"cnn": {"max_epochs": 3}},
              train_runs=3, timing_runs=3).results
    t = {r.model: r.timing for r in res}
    positive = all(x.train_time_s > 0 and x.detect_time_ms > 0 and x.runs >= 3 for x in t.values())
    has_std = all(x.train_time_std_s >= 0 and x.detect_time_std_ms >= 0 for x in t.values())
    faster = t["GNB"].train_time_s < t["CNN"].train_time_s
    ok = positive and has_std and faster
    verdict(8, ok, f"train GNB {t['GNB'].train_time_s:.4f}s vs CNN {t['CNN'].train_time_s:.2f}s, "
                   f"detect GNB {t['GNB'].detect_time_ms:.3f}ms CNN {t['CNN'].detect_time_ms:.3f}ms over {t['GNB'].runs} runs")
