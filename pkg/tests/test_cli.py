import csv
import json

import pytest

from noisytwins.cli import main

TINY = """
iterations = 6
batch_size = 16

[data]
num_classes = 4
n_max = 200
rho = 10.0
grid_cols = 2

[model]
dim = 8
synthesis_layers = 2
synthesis_width = 16
disc_layers = 2
disc_width = 16

[eval]
samples = 400
min_per_class = 20
"""


@pytest.fixture
def cfg(tmp_path):
    path = tmp_path / "tiny.toml"
    path.write_text(TINY)
    return path


def test_gen_data(cfg, tmp_path):
    assert main(["gen-data", str(cfg), "--out", str(tmp_path / "d")]) == 0
    rows = (tmp_path / "d" / "dataset.csv").read_text().splitlines()
    spec = json.loads((tmp_path / "d" / "dataset_spec.json").read_text())
    assert rows[0] == "x0,x1,label"
    assert len(rows) - 1 == sum(spec["class_counts"])


def test_gen_data_balanced(tmp_path):
    path = tmp_path / "flat.toml"
    path.write_text(TINY.replace("rho = 10.0", "rho = 1.0"))
    assert main(["gen-data", str(path), "--out", str(tmp_path / "d")]) == 0
    spec = json.loads((tmp_path / "d" / "dataset_spec.json").read_text())
    assert spec["class_counts"] == [200] * 4


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.toml"
    assert main(["gen-data", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unknown_key_is_usage_error(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text(TINY + "\n[loss]\nlamda = 0.1\n")
    assert main(["train", str(path), "--out", str(tmp_path / "r")]) == 2
    assert "lamda" in capsys.readouterr().err


def test_bad_usage():
    assert main(["frobnicate"]) == 2
    assert main(["train"]) == 2


def test_train_manifest_and_determinism(cfg, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", str(cfg), "--out", str(a), "--seed", "3"]) == 0
    assert main(["train", str(cfg), "--out", str(b), "--seed", "3"]) == 0
    assert (a / "runlog.csv").read_bytes() == (b / "runlog.csv").read_bytes()
    m = json.loads((a / "manifest.json").read_text())
    assert m["status"] == "complete" and m["seed"] == 3 and m["tag"] == "noisytwins"
    for name in [m["paths"]["runlog"], m["paths"]["config"], *m["paths"]["checkpoints"]]:
        assert (a / name).exists()


def test_train_baseline_tag_and_single_iteration(tmp_path):
    path = tmp_path / "base.toml"
    path.write_text(TINY.replace("iterations = 6", "iterations = 1") + "\n[noise]\nsigma = 0.0\n\n[loss]\nlam = 0.0\n")
    assert main(["train", str(path), "--out", str(tmp_path / "r")]) == 0
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["tag"] == "baseline"
    assert len((tmp_path / "r" / "runlog.csv").read_text().splitlines()) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exit_code(tmp_path):
    path = tmp_path / "boom.toml"
    path.write_text(TINY + "\n[optim]\nlr_g = 1e300\nlr_d = 1e300\n")
    assert main(["train", str(path), "--out", str(tmp_path / "r")]) == 3
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["status"] == "diverged"
    assert (tmp_path / "r" / "partial.ckpt").exists()


def test_eval_runs_and_self_mode(cfg, tmp_path):
    main(["gen-data", str(cfg), "--out", str(tmp_path / "d")])
    main(["train", str(cfg), "--out", str(tmp_path / "r")])
    ckpt, data = str(tmp_path / "r" / "final.ckpt"), str(tmp_path / "d" / "dataset.csv")
    assert main(["eval", ckpt, data, "--runs", "3", "--out", str(tmp_path / "e")]) == 0
    assert sorted(p.name for p in (tmp_path / "e").iterdir()) == [
        "eval_run0.csv",
        "eval_run1.csv",
        "eval_run2.csv",
        "summary.csv",
    ]
    with open(tmp_path / "e" / "summary.csv") as fh:
        rows = {r["metric"]: r for r in csv.DictReader(fh)}
    assert {"fid", "precision", "recall", "tail_coverage"} <= set(rows)
    assert rows["precision"]["k"] == "3"

    assert main(["eval", ckpt, data, "--self", "--out", str(tmp_path / "s")]) == 0
    with open(tmp_path / "s" / "summary.csv") as fh:
        rows = {r["metric"]: float(r["mean"]) for r in csv.DictReader(fh)}
    assert rows["fid"] == pytest.approx(0.0, abs=1e-9)
    assert rows["precision"] == 1.0 and rows["recall"] == 1.0


def test_eval_errors(cfg, tmp_path):
    main(["train", str(cfg), "--out", str(tmp_path / "r")])
    ckpt = str(tmp_path / "r" / "final.ckpt")
    assert main(["eval", str(tmp_path / "missing.ckpt"), "x.csv"]) == 2
    bad = tmp_path / "three.csv"
    bad.write_text("x0,x1,x2,label\n0.0,0.0,0.0,0\n")
    assert main(["eval", ckpt, str(bad), "--out", str(tmp_path / "e")]) == 2


def test_sweep(cfg, tmp_path):
    spec = tmp_path / "sweep.toml"
    spec.write_text('param = "sigma"\nvalues = [0.0, 0.25, 0.75]\nseeds = [0, 1]\nbase = "tiny.toml"\nout = "sw"\n')
    assert main(["sweep", str(spec)]) == 0
    lines = (tmp_path / "sw" / "sweep.csv").read_text().splitlines()
    assert lines[0] == "param,value,seed,metric,score"
    assert len(lines) - 1 == 6 * 8
    assert (tmp_path / "sw" / "tail_coverage.svg").read_text().startswith("<svg")


def test_sweep_empty_values(tmp_path):
    spec = tmp_path / "sweep.toml"
    spec.write_text('param = "gamma"\nvalues = []\n')
    assert main(["sweep", str(spec)]) == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_sweep_partial_failure(cfg, tmp_path):
    (tmp_path / "tiny.toml").write_text(TINY + "\n[optim]\nlr_g = 1e300\nlr_d = 1e300\n")
    spec = tmp_path / "sweep.toml"
    spec.write_text('param = "lam"\nvalues = [0.01]\nseeds = [0]\nbase = "tiny.toml"\nout = "sw"\n')
    assert main(["sweep", str(spec)]) == 1
    assert (tmp_path / "sw" / "failures.csv").exists()


def test_sweep_threads(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("NOISYTWINS_THREADS", "2")
    spec = tmp_path / "sweep.toml"
    spec.write_text('param = "gamma"\nvalues = [0.0, 0.05]\nseeds = [0]\nbase = "tiny.toml"\nout = "sw"\n')
    assert main(["sweep", str(spec)]) == 0
    monkeypatch.setenv("NOISYTWINS_THREADS", "zero")
    assert main(["sweep", str(spec)]) == 2
