import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from tensor_galerkin.cli import main

DESK = """\
schema_version: 1
problem: {kind: transport, d: 2}
architecture: {hidden: [20, 20], rank: 3}
quadrature: {points: 8, panels: 4}
evolution: {dt: 0.02, t_final: 0.06, integrator: modified_euler}
strategy: {kind: random_per_step, ratio: 0.5}
fit: {max_iterations: 300, target: 1.0e-5}
output: {directory: OUTDIR, cadence: 1}
seeds: {init: 0, mask: 0, fit: 0}
"""


@pytest.fixture()
def workdir(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(DESK.replace("OUTDIR", str(tmp_path / "out")))
    return tmp_path, cfg


def test_run_success(workdir):
    tmp_path, cfg = workdir
    result = CliRunner().invoke(main, ["run", str(cfg)])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "out" / "errors.csv").exists()
    assert (tmp_path / "out" / "manifest.json").exists()


def test_run_config_error_exit_2(workdir):
    tmp_path, cfg = workdir
    result = CliRunner().invoke(main, ["run", str(cfg), "--set", "evolution.dtt=1"])
    assert result.exit_code == 2
    assert "config error" in result.output


def test_missing_config_exit_2(tmp_path):
    result = CliRunner().invoke(main, ["run", str(tmp_path / "nope.yaml")])
    assert result.exit_code == 2


def test_numerical_failure_exit_3(workdir, monkeypatch):
    tmp_path, cfg = workdir
    from tensor_galerkin import experiment as exp
    from tensor_galerkin.galerkin import NumericalFailure

    def blow_up(*a, **k):
        raise NumericalFailure("forced")

    monkeypatch.setattr(exp, "step_modified_euler", blow_up)
    result = CliRunner().invoke(main, ["run", str(cfg)])
    assert result.exit_code == 3


def test_io_failure_exit_4(workdir):
    tmp_path, cfg = workdir
    blocker = tmp_path / "blocked"
    blocker.write_text("a file, not a directory")
    result = CliRunner().invoke(main, ["run", str(cfg), "--out", str(blocker / "sub")])
    assert result.exit_code == 4


def test_fit_init_then_evolve(workdir):
    tmp_path, cfg = workdir
    runner = CliRunner()
    ckpt = tmp_path / "theta0.ckpt.json"
    result = runner.invoke(main, ["fit-init", str(cfg), "--out", str(ckpt)])
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    result = runner.invoke(main, ["evolve", str(cfg), "--from", str(ckpt),
                                  "--out", str(tmp_path / "evolved")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "evolved" / "errors.csv").exists()


def test_evolve_rejects_missing_checkpoint(workdir):
    tmp_path, cfg = workdir
    result = CliRunner().invoke(main, ["evolve", str(cfg), "--from", str(tmp_path / "nope.ckpt")])
    assert result.exit_code == 4


def test_sweep_writes_runs_and_mean(workdir):
    tmp_path, cfg = workdir
    result = CliRunner().invoke(main, ["sweep", str(cfg), "--reps", "2",
                                       "--out", str(tmp_path / "sweep")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "sweep" / "run00" / "errors.csv").exists()
    assert (tmp_path / "sweep" / "run01" / "errors.csv").exists()
    mean = (tmp_path / "sweep" / "mean.csv").read_text().splitlines()
    assert mean[0] == "t,abs_err,rel_err"
    assert len(mean) > 1


def test_verify_passes_on_preset():
    result = CliRunner().invoke(main, ["verify", "transport-2d-desk"])
    assert result.exit_code == 0, result.output
    assert "FAIL" not in result.output


def test_presets_listing():
    result = CliRunner().invoke(main, ["presets"])
    assert result.exit_code == 0
    assert "transport-2d" in result.output and "kdv-20d" in result.output


def test_preset_by_name_with_overrides(tmp_path):
    result = CliRunner().invoke(
        main,
        ["run", "transport-2d-desk", "--set", "evolution.t_final=0.04",
         "--set", "fit.max_iterations=200", "--out", str(tmp_path / "p")],
    )
    assert result.exit_code == 0, result.output
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert manifest["config"]["evolution"]["t_final"] == 0.04
