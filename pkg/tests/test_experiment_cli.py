import json

import numpy as np
import pytest

from cslearn.cli import main
from cslearn.experiment import ConfigError, ExperimentConfig, run_experiment

SMALL = dict(m=3, d=3, n_train=300, n_val=90, n_test=90, steps=150, outer_iters=5, inner_steps=8)


def config(**kw):
    return ExperimentConfig.from_dict({**SMALL, **kw})


def strip_timestamp(path):
    d = json.loads(path.read_text())
    d.pop("timestamp")
    return json.dumps(d, sort_keys=True)


class TestConfig:
    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key.*learning_rate"):
            ExperimentConfig.from_dict({"task": "ERM", "learning_rate": 0.1})

    def test_wrong_type(self):
        with pytest.raises(ConfigError, match="wrong type"):
            ExperimentConfig.from_dict({"task": "ERM", "seed": "zero"})

    def test_int_accepted_for_float(self):
        assert ExperimentConfig.from_dict({"task": "ERM", "lr": 1}).lr == 1.0

    def test_bad_task(self):
        with pytest.raises(ConfigError, match="task"):
            ExperimentConfig(task="Fairness")

    def test_missing_files(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            ExperimentConfig(task="ERM", train_csv=str(tmp_path / "a"), val_csv=str(tmp_path / "b"),
                             test_csv=str(tmp_path / "c"))
        with pytest.raises(ConfigError, match="all of"):
            ExperimentConfig(task="ERM", train_csv="x.csv")

    def test_coverage_rejects_la(self):
        with pytest.raises(ConfigError, match="not diagonal"):
            ExperimentConfig(task="Coverage", loss="la")

    def test_load_errors(self, tmp_path):
        bad = tmp_path / "c.json"
        bad.write_text("{task")
        with pytest.raises(ConfigError, match="invalid JSON"):
            ExperimentConfig.load(bad)


class TestRunExperiment:
    def test_erm_separable_train_accuracy(self, tmp_path):
        m = run_experiment(config(task="ERM", separation=10.0), tmp_path)
        assert m["train"]["accuracy"] == 1.0
        for name in ("metrics.json", "confusion.csv", "trajectory.jsonl", "model.json"):
            assert (tmp_path / name).exists()

    def test_min_recall_trajectory_lines(self, tmp_path):
        run_experiment(config(task="MinRecall", outer_iters=7), tmp_path)
        lines = (tmp_path / "trajectory.jsonl").read_text().splitlines()
        assert len(lines) == 7
        assert json.loads(lines[-1])["t"] == 6

    @pytest.mark.parametrize("task", ["ERM", "MinRecall", "Coverage"])
    def test_deterministic(self, tmp_path, task):
        cfg = config(task=task, seed=3)
        run_experiment(cfg, tmp_path / "a")
        run_experiment(cfg, tmp_path / "b")
        assert strip_timestamp(tmp_path / "a" / "metrics.json") == strip_timestamp(tmp_path / "b" / "metrics.json")

    def test_postshift_oracle_matches_grid(self, tmp_path):
        m = run_experiment(config(task="PostShift", oracle_eta=True, separation=1.0), tmp_path)
        ps = m["postshift"]
        assert abs(ps["val_min_recall"] - ps["grid_val_min_recall"]) <= 0.01

    def test_postshift_large_m_skips_grid(self, tmp_path):
        m = run_experiment(config(task="PostShift", oracle_eta=True, m=10, d=10, n_train=400, n_val=100,
                                  n_test=100, postshift_T=50), tmp_path)
        assert m["postshift"]["grid_val_min_recall"] is None

    def test_csv_inputs(self, tmp_path):
        assert main(["gen", "--config", self._cfg(tmp_path, {**SMALL, "task": "ERM"}), "--out",
                     str(tmp_path / "data")]) == 0
        files = {k: str(tmp_path / "data" / f"{k}.csv") for k in ("train", "val", "test")}
        m = run_experiment(ExperimentConfig(task="ERM", train_csv=files["train"], val_csv=files["val"],
                                            test_csv=files["test"], steps=50), tmp_path / "run")
        assert 0.0 <= m["test"]["accuracy"] <= 1.0

    @staticmethod
    def _cfg(tmp_path, d):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps(d))
        return str(path)


class TestCli:
    def _cfg(self, tmp_path, **kw):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({**SMALL, **kw}))
        return str(path)

    def test_gen_writes_splits(self, tmp_path, capsys):
        assert main(["gen", "--config", self._cfg(tmp_path), "--seed", "4", "--out", str(tmp_path / "g")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert len(summary["train_counts"]) == 3
        for name in ("train.csv", "val.csv", "test.csv", "grid.csv", "synth.json"):
            assert (tmp_path / "g" / name).exists()
        grid = np.loadtxt(tmp_path / "g" / "grid.csv", delimiter=",", skiprows=1)
        assert np.allclose(grid[:, 3:6].sum(axis=1), 1.0)

    @pytest.mark.parametrize("command", ["train", "reduce-minrecall", "reduce-coverage", "postshift"])
    def test_run_commands(self, tmp_path, capsys, command):
        out = tmp_path / command
        assert main([command, "--config", self._cfg(tmp_path), "--out", str(out)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert 0.0 <= summary["test_min_recall"] <= 1.0
        assert (out / "metrics.json").exists()

    def test_distill_command(self, tmp_path, capsys):
        cfg = self._cfg(tmp_path, gammas=[0.1, 0.5], outer_iters=3)
        assert main(["distill", "--config", cfg, "--out", str(tmp_path / "d")]) == 0
        m = json.loads((tmp_path / "d" / "metrics.json").read_text())
        assert set(m["distill"]["sweep"]) == {"0.1", "0.5"}

    def test_error_json_and_exit_code(self, tmp_path, capsys):
        assert main(["train", "--config", self._cfg(tmp_path, bogus=1)]) == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "ConfigError"
        assert "bogus" in err["message"]

    def test_train_rejects_reduction_task(self, tmp_path, capsys):
        assert main(["train", "--config", self._cfg(tmp_path, task="MinRecall")]) == 2
        assert "reduce-" in json.loads(capsys.readouterr().err)["message"]

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2
        assert json.loads(capsys.readouterr().err)["error"]

    def test_gradcheck(self, tmp_path, capsys):
        assert main(["gradcheck", "--draws", "10", "--out", str(tmp_path)]) == 0
        captured = capsys.readouterr()
        assert json.loads(captured.out)["passed"] is True
        assert "PASS" in captured.err
        assert json.loads((tmp_path / "gradcheck.json").read_text())

    def test_calibcheck(self, capsys):
        assert main(["calibcheck", "--problems", "2"]) == 0
        assert json.loads(capsys.readouterr().out)["passed"] is True
