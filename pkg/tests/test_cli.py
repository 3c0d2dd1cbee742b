import json
import subprocess
import sys

import pytest

from cloudmw import datastore as ds
from cloudmw.cli import EXIT_ALERT, EXIT_ERROR, EXIT_OK, main

SMALL_CNN = ["--set", "cnn.max_epochs=1", "--set", "cnn.blocks=1", "--set", "cnn.growth=2",
             "--set", "cnn.init_channels=2", "--set", "svc.epochs=2", "--set", "rf.n_trees=5",
             "--set", "gbt.n_stages=5"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["simulate", "-n", "3", "--seed", "4", "--out", str(root / "sim"),
                 "--jsonl", str(root / "sim.jsonl")]) == EXIT_OK
    assert main(["train", "--dataset", str(root / "sim" / "dataset.cmwd"), "--models", "all",
                 "--out", str(root / "run"), *SMALL_CNN]) == EXIT_OK
    return root


def test_simulate_single_experiment(tmp_path, capsys):
    assert main(["simulate", "-n", "1", "--out", str(tmp_path / "a")]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["records"] == 360 and info["experiments"] == 1
    assert len(ds.read_dataset(tmp_path / "a" / "dataset.cmwd")) == 360
    main(["simulate", "-n", "1", "--out", str(tmp_path / "b")])
    for name in ("dataset.cmwd", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_text_format(tmp_path):
    assert main(["simulate", "-n", "1", "--format", "text", "--out", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "dataset.csv").read_text().startswith("#CMWDSET ")


def test_train_writes_every_model(workspace):
    files = sorted(p.name for p in (workspace / "run" / "models").iterdir())
    assert files == sorted(f"{k}.cmwm" for k in ("cnn", "svc", "rf", "knn", "gbt", "gnb"))
    split = json.loads((workspace / "run" / "split.json").read_text())
    assert sorted(split["train"] + split["val"] + split["test"]) == [0, 1, 2]


def test_train_single_model_is_deterministic(workspace, tmp_path):
    data = str(workspace / "sim" / "dataset.cmwd")
    for name in ("x", "y"):
        assert main(["train", "--dataset", data, "--models", "knn", "--out", str(tmp_path / name)]) == EXIT_OK
    assert [p.name for p in (tmp_path / "x" / "models").iterdir()] == ["knn.cmwm"]
    assert (tmp_path / "x" / "models" / "knn.cmwm").read_bytes() == (tmp_path / "y" / "models" / "knn.cmwm").read_bytes()


def test_evaluate_and_report(workspace, capsys):
    run = workspace / "run"
    assert main(["evaluate", "--dataset", str(workspace / "sim" / "dataset.cmwd"), "--out", str(run),
                 "--timing-runs", "2", "--min-samples", "20"]) == EXIT_OK
    text = capsys.readouterr().out
    for name in ("CNN", "SVC", "RFC", "KNN", "GBC", "GNB"):
        assert name in text
    summary = json.loads((run / "report" / "report.json").read_text())
    split = json.loads((run / "split.json").read_text())
    assert summary["test_experiments"] == split["test"]
    assert len(summary["models"]) == 6
    assert all(m["timing"]["detect_time_ms"] > 0 for m in summary["models"])
    assert (run / "report" / "metrics.csv").read_text().count("\n") == 7
    assert main(["report", str(run / "report")]) == EXIT_OK
    assert capsys.readouterr().out == text


def _detect(model, lines, tmp_path, *extra):
    src = tmp_path / "in.jsonl"
    src.write_text("".join(lines))
    out = tmp_path / "out.jsonl"
    code = main(["detect", "--model", str(model), "--input", str(src), "--output", str(out), *extra])
    return code, [json.loads(x) for x in out.read_text().splitlines()] if out.exists() else []


def test_detect_exit_codes(workspace, tmp_path):
    model = workspace / "run" / "models" / "gnb.cmwm"
    lines = (workspace / "sim.jsonl").read_text().splitlines(keepends=True)
    code, out = _detect(model, lines[:20], tmp_path)
    assert code == EXIT_OK and len(out) == 20
    assert all(o["verdict"] == "BENIGN" and o["latency_ms"] > 0 for o in out)

    code, out = _detect(model, lines[:360], tmp_path)
    assert code == EXIT_ALERT and out[-1]["verdict"] == "INFECTED"

    assert _detect(model, [], tmp_path)[0] == EXIT_OK
    assert _detect(model, lines[:3] + ["{broken\n"] + lines[3:5], tmp_path)[0] == EXIT_ERROR
    code, out = _detect(model, lines[:3] + ["{broken\n"] + lines[3:5], tmp_path, "--on-error", "continue")
    assert code == EXIT_ERROR and len(out) == 5


def test_detect_rejects_wrong_file(workspace, tmp_path):
    assert main(["detect", "--model", str(workspace / "sim" / "dataset.cmwd"), "--input", "/dev/null"]) == EXIT_ERROR


@pytest.mark.parametrize("fmt", ["yaml", "json"])
def test_config_file_overrides_flags(tmp_path, capsys, fmt):
    cfg = tmp_path / f"c.{fmt}"
    cfg.write_text("n: 1\nseed: 3\n" if fmt == "yaml" else '{"n": 1, "seed": 3}')
    assert main(["simulate", "-n", "5", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["experiments"] == 1
    assert ds.read_manifest(tmp_path / "o" / "manifest.json").base_seed == 3


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("bogus: 1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_ERROR
    assert "bogus" in capsys.readouterr().err


def test_invalid_values(tmp_path):
    assert main(["simulate", "-n", "0", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["simulate", "--intensity", "2", "--out", str(tmp_path)]) == EXIT_ERROR
    assert main(["train", "--dataset", str(tmp_path / "nope.cmwd"), "--out", str(tmp_path)]) == EXIT_ERROR


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CLOUDMW_OUTPUT_DIR", str(tmp_path / "env"))
    assert main(["simulate", "-n", "1"]) == EXIT_OK
    assert (tmp_path / "env" / "dataset.cmwd").exists()


def test_help_and_usage_errors():
    run = lambda *a: subprocess.run([sys.executable, "-m", "cloudmw.cli", *a], capture_output=True, text=True)  # noqa: E731
    h = run("--help")
    assert h.returncode == 0 and "simulate" in h.stdout and "detect" in h.stdout
    assert "3 at least one infected" in " ".join(run("detect", "--help").stdout.split())
    assert run("simulate", "--bogus").returncode == 2
    assert run().returncode == 2


def test_detect_held_out_benign_phase_is_quiet(workspace, tmp_path, capsys):
    test_id = json.loads((workspace / "run" / "split.json").read_text())["test"][0]
    lines = [x for x in (workspace / "sim.jsonl").read_text().splitlines(keepends=True)
             if json.loads(x)["experiment_id"] == test_id and json.loads(x)["label"] == "BENIGN"]
    code, out = _detect(workspace / "run" / "models" / "rf.cmwm", lines, tmp_path)
    assert len(out) == 180 and code == EXIT_OK
    assert sum(o["verdict"] == "INFECTED" for o in out) == 0
    assert "0 infected" in capsys.readouterr().err
