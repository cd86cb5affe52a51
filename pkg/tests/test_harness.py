import json
import os

import numpy as np
import pytest

from multirobust import harness
from multirobust import io as mio
from multirobust.cli import main
from multirobust.harness import ExperimentConfig, recompute_report, replay, run_experiment


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("exp")
    mio.write_surrogate_mnist(d / "data", 1500, 200, seed=0)
    cfg = {"command": "train", "output": "run", "seed": 0,
           "dataset": {"images": "data/train-images-idx3-ubyte",
                       "labels": "data/train-labels-idx1-ubyte"},
           "model": {"arch": "mlp", "hidden": [64]},
           "train": {"epochs": 3, "batch_size": 50, "optimizer": {"kind": "adam", "lr": 0.002}}}
    (d / "train.json").write_text(json.dumps(cfg))
    att = {"command": "attack", "output": "run", "seed": 0,
           "dataset": {"images": "data/t10k-images-idx3-ubyte",
                       "labels": "data/t10k-labels-idx1-ubyte", "n": 100},
           "attacks": [{"name": "linf", "type": "linf", "eps": 0.3, "steps": 20},
                       {"name": "l1", "type": "l1", "eps": 10, "steps": 20},
                       {"name": "rt", "type": "rt", "dx": 1, "dy": 1, "angle": 10,
                        "grid_angles": 3}]}
    (d / "attack.json").write_text(json.dumps(att))
    assert main(["train", "--config", str(d / "train.json")]) == 0
    assert main(["attack", "--model", str(d / "run/model.bin"),
                 "--config", str(d / "attack.json")]) == 0
    return d


def test_train_outputs(workdir):
    run = workdir / "run"
    log = (run / "train_log.jsonl").read_text().splitlines()
    assert len(log) == 3
    man = json.loads((run / "manifest_train.json").read_text())
    assert man["seed"] == 0 and "numpy" in man["versions"]
    assert man["outputs"]["model.bin"] == mio.sha256_file(run / "model.bin")


def test_natural_model_breaks_under_linf(workdir):
    rep = json.loads((workdir / "run/report.json").read_text())
    acc = {a["name"]: a["accuracy"] for a in rep["attacks"]}
    assert rep["clean_accuracy"] > 0.8
    assert acc["linf"] <= 0.05
    assert rep["union_accuracy"] <= min(acc.values()) <= rep["average_accuracy"]


def test_report_recomputes(workdir):
    assert main(["report", "--in", str(workdir / "run")]) == 0
    summary = json.loads((workdir / "run/summary.json").read_text())
    assert summary["match"] and summary["max_abs_diff"] <= 1e-12


def test_report_detects_tampering(workdir, tmp_path):
    rep = json.loads((workdir / "run/report.json").read_text())
    rep["union_accuracy"] += 0.01
    assert not recompute_report(rep)["match"]


def test_rerun_bit_exact(workdir, tmp_path):
    cfg = harness.load_config(workdir / "train.json")
    cfg.output = str(tmp_path / "again")
    assert run_experiment(cfg) == 0
    assert mio.sha256_file(tmp_path / "again/model.bin") == mio.sha256_file(workdir / "run/model.bin")


def test_replay_from_manifest(workdir, tmp_path):
    assert replay(workdir / "run/manifest_attack.json", tmp_path / "replay") == 0
    a = (workdir / "run/report.json").read_bytes()
    b = (tmp_path / "replay/report.json").read_bytes()
    assert a == b


def test_scan_surface(workdir):
    rc = main(["scan-surface", "--model", str(workdir / "run/model.bin"), "--point", "3",
               "--dir-a", "linf", "--dir-b", "l1", "--config", str(workdir / "attack.json"),
               "--grid", "4"])
    assert rc == 0
    surf = json.loads((workdir / "run/surface.json").read_text())
    assert np.array(surf["loss"]).shape == (4, 4)
    assert len((workdir / "run/surface.csv").read_text().splitlines()) == 5


def test_scan_surface_json_direction(workdir):
    def corner(dir_a):
        rc = main(["scan-surface", "--model", str(workdir / "run/model.bin"), "--point", "3",
                   "--dir-a", dir_a, "--dir-b", "l1",
                   "--config", str(workdir / "attack.json"), "--grid", "3"])
        assert rc == 0
        surf = json.loads((workdir / "run/surface.json").read_text())
        return np.array(surf["loss"])

    small = corner('{"type": "linf", "eps": 1e-6}')
    default = corner("linf")
    # the inline eps is honoured: a tiny linf step barely moves the loss
    assert np.allclose(small[:, 0], small[0, 0], atol=1e-3)
    assert not np.allclose(default[:, 0], default[0, 0], atol=1e-3)


def test_partial_outputs_removed(workdir, tmp_path, monkeypatch):
    cfg = harness.load_config(workdir / "train.json")
    cfg.output = str(tmp_path / "fail")

    def boom(obj):
        raise OSError("disk full")
    monkeypatch.setattr(harness.mio, "dumps_json", boom)
    with pytest.raises(RuntimeError, match="train failed"):
        run_experiment(cfg)
    assert os.listdir(tmp_path / "fail") == []


def test_output_override(workdir, tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUT_ENV, str(tmp_path / "elsewhere"))
    assert main(["report", "--in", str(workdir / "run")]) == 0
    assert (tmp_path / "elsewhere/summary.json").exists()


def test_bad_configs(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig("fly")
    cfg = ExperimentConfig("attack", output=str(tmp_path), model=str(tmp_path / "missing.bin"))
    with pytest.raises(RuntimeError):
        run_experiment(cfg)
    with pytest.raises(ValueError):
        harness.attack_callable({"type": "linf", "eps": 0}, 0)
    with pytest.raises(ValueError):
        harness.attack_callable({"type": "laser"}, 0)
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2


def test_verify_theory_cli(tmp_path):
    assert main(["verify-theory", "--samples", "20000", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "verification.json").read_text())
    assert out["pass"] and all(c["pass"] for c in out["checks"])
    assert all(set(c) == {"check", "value", "bound", "ci", "pass"} for c in out["checks"])
