import csv
import json

import numpy as np
import pytest
import yaml

from compdistill import cli, gradcheck
from compdistill.config import OUTPUT_DIR_ENV
from compdistill.nn import backward

BASE = {
    "cohort": [{"kind": "mlp", "hidden": [12]}, {"kind": "mlp", "hidden": [20]}],
    "dataset": {"kind": "blobs", "n_samples": 240, "n_classes": 3, "input_dim": 6, "spread": 0.4},
    "epochs": 2,
    "batch_size": 32,
    "seeds": {"init": 1, "shuffle": 2, "perturb": 3},
}


def _write(tmp_path, name="run.yaml", **overrides):
    raw = dict(BASE, output_dir="out", **overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


@pytest.fixture(autouse=True)
def _no_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)


class TestTrain:
    def test_writes_metrics_and_report(self, tmp_path, capsys):
        assert cli.main(["train", str(_write(tmp_path))]) == 0
        out = tmp_path / "out"
        with open(out / "metrics.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0][:5] == ["row", "iter", "epoch", "net", "role"] and len(rows) > 1
        report = json.loads((out / "report.json").read_text())
        assert report["strategy"] == "competitive" and len(report["final_acc"]) == 2
        assert (out / "checkpoint.zip").exists()
        assert "teacher switches" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, tmp_path):
        cfg = _write(tmp_path)
        cli.main(["train", str(cfg)])
        first = (tmp_path / "out/metrics.csv").read_bytes()
        cli.main(["train", str(cfg)])
        assert (tmp_path / "out/metrics.csv").read_bytes() == first

    def test_missing_dataset_file_exits_2_before_compute(self, tmp_path, monkeypatch):
        cfg = _write(tmp_path, dataset={"kind": "idx", "train_images": "nope.idx", "train_labels": "x",
                                        "test_images": "y", "test_labels": "z"})
        monkeypatch.setattr(cli, "train", lambda *a, **k: pytest.fail("training started"))
        assert cli.main(["train", str(cfg)]) == 2
        assert not (tmp_path / "out").exists()

    @pytest.mark.parametrize("bad", [{"strategy": "bagging"}, {"epochs": -1}, {"typo_key": 1},
                                     {"cohort": [{"hidden": [4]}]}])
    def test_config_errors_exit_2(self, tmp_path, bad, capsys):
        assert cli.main(["train", str(_write(tmp_path, **bad))]) == 2
        assert "error:" in capsys.readouterr().err

    def test_malformed_data_exits_3(self, tmp_path):
        for name in ("a", "b", "c", "d"):
            (tmp_path / name).write_bytes(b"\x00\x00")
        cfg = _write(tmp_path, dataset={"kind": "idx", "train_images": "a", "train_labels": "b",
                                        "test_images": "c", "test_labels": "d"})
        assert cli.main(["train", str(cfg)]) == 3

    def test_divergence_exits_4(self, tmp_path):
        cfg = _write(tmp_path, optimizer={"learning_rate": 1e6, "momentum": 0.0})
        with np.errstate(all="ignore"):
            assert cli.main(["train", str(cfg)]) == 4
        assert (tmp_path / "out/metrics.csv").exists()

    def test_env_var_overrides_output_dir(self, tmp_path, monkeypatch):
        target = tmp_path / "elsewhere"
        monkeypatch.setenv(OUTPUT_DIR_ENV, str(target))
        assert cli.main(["train", str(_write(tmp_path))]) == 0
        assert (target / "metrics.csv").exists() and not (tmp_path / "out").exists()

    def test_default_output_dir_uses_config_stem(self, tmp_path, monkeypatch):
        raw = dict(BASE)
        (tmp_path / "exp1.yaml").write_text(yaml.safe_dump(raw))
        monkeypatch.chdir(tmp_path)
        assert cli.main(["train", "exp1.yaml"]) == 0
        assert (tmp_path / "runs/exp1/metrics.csv").exists()


class TestCompare:
    def test_three_strategies(self, tmp_path, capsys):
        cfg = _write(tmp_path, strategies=[
            {"strategy": "independent", "use_feature_loss": False, "use_perturbation": False},
            {"strategy": "dml", "use_feature_loss": False, "use_perturbation": False},
            {"strategy": "competitive"},
        ])
        assert cli.main(["compare", str(cfg)]) == 0
        out = tmp_path / "out"
        rows = list(csv.reader(open(out / "comparison.csv")))
        assert rows[0] == ["net", "0_independent", "1_dml", "2_competitive", "Imp-Ind", "Imp-DML"]
        for row in rows[1:]:
            assert float(row[4]) == pytest.approx(float(row[3]) - float(row[1]), abs=0.011)
            assert float(row[5]) == pytest.approx(float(row[3]) - float(row[2]), abs=0.011)
        for sub in ("0_independent", "1_dml", "2_competitive"):
            assert (out / sub / "metrics.csv").exists()
        assert "Imp-Ind" in capsys.readouterr().out

    def test_identical_strategies_give_zero_delta(self, tmp_path):
        cfg = _write(tmp_path, strategies=[{"strategy": "independent", "name": "a"},
                                           {"strategy": "independent", "name": "b"}])
        assert cli.main(["compare", str(cfg)]) == 0
        reports = json.loads((tmp_path / "out/reports.json").read_text())
        assert reports[1]["imp_ind"] == [0.0, 0.0]
        a = (tmp_path / "out/0_a/metrics.csv").read_bytes()
        assert a == (tmp_path / "out/1_b/metrics.csv").read_bytes()

    def test_needs_two_entries(self, tmp_path):
        assert cli.main(["compare", str(_write(tmp_path, strategies=[{"strategy": "dml"}]))]) == 2


class TestGradcheck:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_passes(self, seed, capsys):
        assert cli.main(["gradcheck", "--seed", str(seed)]) == 0
        out = capsys.readouterr().out
        for name in ("L_C", "L_D", "L_F"):
            assert f"{name}: max relative error" in out

    def test_corrupted_feature_gradient_exits_5(self, monkeypatch, capsys):
        def broken(net, record, grad_logits, grad_feature=None):
            scaled = None if grad_feature is None else 1.5 * grad_feature
            return backward(net, record, grad_logits, scaled)

        monkeypatch.setattr(gradcheck, "backward", broken)
        assert cli.main(["gradcheck"]) == 5
        assert "L_F" in capsys.readouterr().err

    def test_corrupted_logit_gradient_names_both_logit_losses(self):
        def broken(net, record, grad_logits, grad_feature=None):
            return backward(net, record, 0.9 * grad_logits, grad_feature)

        bad = gradcheck.failing(gradcheck.run_gradcheck(0, backward_fn=broken))
        assert "L_C" in bad and "L_D" in bad and "L_F" not in bad


class TestInspect:
    def test_lists_networks(self, tmp_path, capsys):
        cli.main(["train", str(_write(tmp_path))])
        capsys.readouterr()
        assert cli.main(["inspect", str(tmp_path / "out/checkpoint.zip")]) == 0
        out = capsys.readouterr().out
        assert "format_version: 1" in out and "net 0: mlp" in out and "net 1: mlp" in out

    def test_garbage_file_exits_3(self, tmp_path):
        (tmp_path / "bad.zip").write_bytes(b"not a zip")
        assert cli.main(["inspect", str(tmp_path / "bad.zip")]) == 3

    def test_missing_file_exits_3(self, tmp_path):
        assert cli.main(["inspect", str(tmp_path / "none.zip")]) == 3


def test_module_entry_point():
    import subprocess
    import sys

    res = subprocess.run([sys.executable, "-m", "compdistill", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout


@pytest.mark.parametrize("name", ["blobs_competitive.yaml", "blobs_compare.yaml"])
def test_shipped_configs_load(name):
    from pathlib import Path

    from compdistill.config import load_config

    cfg = load_config(Path(__file__).parent.parent / "configs" / name)
    assert [a["hidden"] for a in cfg.cohort] == [[64], [256]]
