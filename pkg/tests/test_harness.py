import csv
import dataclasses
import os

import numpy as np
import pytest

from isacfeel.cli import EXIT_INFEASIBLE, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from isacfeel.config import SystemConfig, TrainConfig, load_config
from isacfeel.harness import (
    ExperimentSpec,
    InfeasibleExperimentError,
    ResultRow,
    format_csv,
    run_experiment,
    run_trial,
    spec_from_harness,
)
from isacfeel.numerics import ValidationError

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "configs")


def small_spec(out, **kw):
    base = dict(sweep="eps0", grid=(80.0, 320.0), trials=3, policies=("mp", "greedy", "random"),
                out=str(out), system=SystemConfig(seed=5), sensing_trials=2)
    base.update(kw)
    return ExperimentSpec(**base)


class TestSpecValidation:
    @pytest.mark.parametrize("kw,fragment", [
        (dict(sweep="L"), "sweep"),
        (dict(grid=()), "empty"),
        (dict(grid=(3.0, 1.0)), "not sorted"),
        (dict(trials=0), "trials"),
        (dict(policies=("mp", "oracle")), "oracle"),
        (dict(sensing_trials=-1), "sensing_trials"),
        (dict(workers=0), "workers"),
    ])
    def test_rejects(self, tmp_path, kw, fragment):
        with pytest.raises(ValidationError, match=fragment):
            small_spec(tmp_path / "x.csv", **kw)

    def test_reports_all_problems(self, tmp_path):
        with pytest.raises(ValidationError, match="grid.*trials"):
            small_spec(tmp_path / "x.csv", grid=(), trials=0)

    def test_from_harness_section(self):
        system, train, harness = load_config(os.path.join(CONFIGS, "sweep_gamma.ini"))
        spec = spec_from_harness(system, train, harness, trials=7, out="o.csv")
        assert spec.sweep == "gamma" and spec.trials == 7 and spec.out == "o.csv"
        assert spec.grid == (0.0, 3e-12, 6e-12, 9e-12, 1.2e-11)
        assert spec.policies == ("mp",)

    def test_unparseable_grid(self):
        system, train, _ = load_config()
        with pytest.raises(ValidationError, match="grid"):
            spec_from_harness(system, train, {"sweep": "eps0", "grid": "1, two"})


class TestRun:
    def test_csv_layout(self, tmp_path):
        rows = run_experiment(small_spec(tmp_path / "s.csv"), plot=False)
        with open(tmp_path / "s.csv", newline="") as fh:
            table = list(csv.reader(fh))
        assert table[0] == [f.name for f in dataclasses.fields(ResultRow)]
        assert len(table) == 1 + 2 * 3 == 1 + len(rows)
        assert [r[1] for r in table[1:4]] == ["mp", "greedy", "random"]
        assert all(r.trials == 3 for r in rows)

    def test_byte_identical_reruns(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            run_experiment(small_spec(tmp_path / name, trials=1, grid=(200.0,)), plot=False)
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_worker_count_does_not_change_output(self, tmp_path):
        run_experiment(small_spec(tmp_path / "one.csv"), plot=False)
        run_experiment(small_spec(tmp_path / "two.csv", workers=2), plot=False)
        assert (tmp_path / "one.csv").read_bytes() == (tmp_path / "two.csv").read_bytes()

    def test_policies_share_channel_draws(self, tmp_path):
        spec = small_spec(tmp_path / "x.csv", sweep="d_target", grid=(50.0,),
                          system=SystemConfig(seed=5, eps0=np.inf, Gamma0=np.inf))
        results = run_trial(spec, 50.0, 0)
        assert {r.size for r in results} == {spec.system.K}
        assert len({r.crb for r in results}) == 1

    def test_missing_directory(self, tmp_path):
        with pytest.raises(OSError):
            run_experiment(small_spec(tmp_path / "missing" / "s.csv"), plot=False)

    def test_infeasible_experiment(self, tmp_path):
        spec = small_spec(tmp_path / "s.csv", system=SystemConfig(Gamma0=1e-15))
        with pytest.raises(InfeasibleExperimentError):
            run_experiment(spec, plot=False)
        assert "nan" in (tmp_path / "s.csv").read_text()

    def test_figure_written(self, tmp_path):
        run_experiment(small_spec(tmp_path / "s.csv"))
        assert (tmp_path / "s.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_size_grows_with_threshold(self, tmp_path):
        rows = run_experiment(small_spec(tmp_path / "s.csv", grid=(50.0, 320.0), trials=10,
                                         policies=("mp",), sensing_trials=0), plot=False)
        assert rows[0].mean_size <= rows[1].mean_size
        assert np.isnan(rows[0].mean_sensing_mse) or rows[0].mean_size == 0

    def test_training_columns(self, tmp_path):
        system, train, _ = load_config(os.path.join(CONFIGS, "train_distance.ini"))
        spec = small_spec(tmp_path / "t.csv", sweep="d_target", grid=(50.0,), trials=1, policies=("mp",),
                          system=system, train=dataclasses.replace(train, rounds=2), run_training=True)
        row = run_experiment(spec, plot=False)[0]
        assert 0 <= row.final_accuracy <= 1 and np.isfinite(row.final_loss)


def test_number_format():
    row = ResultRow(1.0, "mp", 2.5, 1e-10, float("nan"), 3.0, 0.5, 0.25, 4, 0, 0, 0, 0, 0, 0)
    line = format_csv([row]).splitlines()[1]
    assert line == "1,mp,2.5,1e-10,nan,3,0.5,0.25,4,0,0,0,0,0,0"


class TestCLI:
    def test_selftest(self, capsys):
        assert main(["selftest"]) == EXIT_OK
        out = capsys.readouterr().out
        assert out.count("PASS") >= 9 and "FAIL" not in out

    def test_schedule(self, capsys):
        assert main(["schedule", "--seed", "3", "--set", "eps0=inf", "--set", "Gamma0=inf"]) == EXIT_OK
        assert "|S|: 20 of 20" in capsys.readouterr().out

    def test_schedule_infeasible(self, capsys):
        assert main(["schedule", "--set", "Gamma0=1e-15"]) == EXIT_INFEASIBLE
        assert "feasible: False" in capsys.readouterr().out

    def test_sense(self, capsys):
        assert main(["sense", "--trials", "20"]) == EXIT_OK
        assert "mse / crb" in capsys.readouterr().out

    def test_train(self, tmp_path, capsys):
        out = tmp_path / "train.png"
        code = main(["train", "--config", os.path.join(CONFIGS, "train_distance.ini"), "--trials", "2",
                     "--out", str(out)])
        assert code == EXIT_OK and out.exists()
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].startswith("round\tsize") and lines[2].startswith("2\t")

    def test_sweep(self, tmp_path):
        out = tmp_path / "s.csv"
        code = main(["sweep", "--config", os.path.join(CONFIGS, "sweep_eps0.ini"), "--trials", "2",
                     "--out", str(out), "--set", "grid=100,200", "--set", "sensing_trials=1"])
        assert code == EXIT_OK and out.exists() and (tmp_path / "s.png").exists()

    def test_sweep_infeasible(self, tmp_path):
        code = main(["sweep", "--trials", "1", "--out", str(tmp_path / "s.csv"), "--set", "Gamma0=1e-15"])
        assert code == EXIT_INFEASIBLE

    @pytest.mark.parametrize("argv", [
        ["nonsense"],
        ["schedule", "--set", "bogus=1"],
        ["schedule", "--set", "N=abc"],
        ["schedule", "--set", "novalue"],
        ["schedule", "--set", "P_d=-1"],
        ["sweep", "--trials", "0"],
        ["sweep", "--set", "sweep=L"],
        ["schedule", "--seed", "x"],
    ])
    def test_validation_errors(self, argv, capsys):
        assert main(argv) == EXIT_VALIDATION

    def test_unwritable_output(self, tmp_path):
        assert main(["sweep", "--trials", "1", "--out", str(tmp_path / "no" / "s.csv")]) == EXIT_RUNTIME

    def test_missing_config_file(self, tmp_path):
        assert main(["schedule", "--config", str(tmp_path / "absent.ini")]) == EXIT_RUNTIME

    def test_help_lists_defaults(self, capsys):
        assert main(["--help"]) == EXIT_OK
        assert "eps0 = 200.0" in capsys.readouterr().out


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(sensing="maybe")
