"""
Tests for the command-line interface.
"""

import json
import runpy
import sys

from click.testing import CliRunner
import pandas as pd
from loguru import logger
import pytest

from jdrecon.cli import cli, generate_report, setup_logging
from jdrecon.config import load_config
from jdrecon.models import DiagnosticsReport, ErrorReport, InitialLaw, LossKind, PriorMode, TimeGrid, TrainSummary
from jdrecon.process_model import zero_spec
from jdrecon.simulator import simulate_ensemble
from jdrecon.storage import read_ensemble, read_manifest, write_ensemble_csv

TINY = [
    "--train.N=4",
    "--train.M_s=6",
    "--train.drift_net.width=8",
    "--train.diffusion_net.width=8",
    "--train.jump_net.width=8",
]


@pytest.fixture
def runner():
    return CliRunner()


def invoke(runner, *args):
    return runner.invoke(cli, [str(a) for a in args], catch_exceptions=False)


class TestPresets:
    """Test cases for the presets command."""

    def test_lists_presets(self, runner):
        """Test the preset table."""
        result = invoke(runner, "presets")
        assert result.exit_code == 0
        assert "Sweep grids" in result.output
        assert "initial-noise" in result.output

    def test_single_preset_as_json(self, runner):
        """Test one preset rendered as JSON."""
        result = invoke(runner, "presets", "example3", "--output-format", "json")
        assert result.exit_code == 0
        data = json.loads(result.output)
        assert list(data) == ["example3"]
        assert data["example3"]["train"]["prior"] == "drift_given"

    def test_write_preset(self, runner, tmp_path):
        """Test writing a preset as a config file."""
        path = tmp_path / "exp.yaml"
        result = invoke(runner, "presets", "example2-desk", "--write", path)
        assert result.exit_code == 0
        assert load_config(path).name == "example2-desk"

    def test_unknown_preset(self, runner):
        """Test that an unknown preset exits with the configuration code."""
        assert invoke(runner, "presets", "example9").exit_code == 2

    def test_module_entry_point(self, capsys, monkeypatch):
        """Test that python -m jdrecon dispatches to the CLI."""
        monkeypatch.setattr(sys, "argv", ["jdrecon", "presets", "example1", "--output-format", "json"])
        with pytest.raises(SystemExit) as excinfo:
            runpy.run_module("jdrecon", run_name="__main__")
        assert excinfo.value.code == 0
        assert "example1" in json.loads(capsys.readouterr().out)

    def test_help_without_command(self, runner):
        """Test that the bare group prints its help."""
        result = invoke(runner)
        assert result.exit_code == 0
        assert "simulate" in result.output


class TestSimulate:
    """Test cases for the simulate command."""

    def test_same_seed_same_files(self, runner, tmp_path):
        """Test that two simulations of one config write identical files."""
        for name in ("a", "b"):
            result = invoke(runner, "simulate", "example1-desk", "-o", tmp_path / name, "--log-level", "ERROR", *TINY)
            assert result.exit_code == 0
        for file in ("observed.jde", "observed.csv"):
            assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()
        E = read_ensemble(tmp_path / "a" / "observed.jde")
        assert (E.M, E.grid.N) == (6, 4)
        manifest = read_manifest(tmp_path / "a" / "manifest.json")
        assert manifest.command == "simulate"
        assert "observed.csv" in manifest.artifacts

    def test_binary_only(self, runner, tmp_path):
        """Test restricting the output to the binary container."""
        result = invoke(runner, "simulate", "example3-desk", "-o", tmp_path, "--format", "binary", "--log-level", "ERROR", *TINY)
        assert result.exit_code == 0
        assert (tmp_path / "observed.jde").exists()
        assert not (tmp_path / "observed.csv").exists()

    def test_unknown_override(self, runner, tmp_path):
        """Test that a misspelled override exits with the configuration code."""
        result = invoke(runner, "simulate", "example1-desk", "-o", tmp_path, "--train.bogus=1")
        assert result.exit_code == 2

    def test_missing_config(self, runner, tmp_path):
        """Test that a missing config file exits with the configuration code."""
        assert invoke(runner, "simulate", tmp_path / "absent.yaml").exit_code == 2


class TestTrain:
    """Test cases for the train command."""

    def test_zero_epochs(self, runner, tmp_path):
        """Test that zero epochs writes every artifact and reports the untrained errors."""
        result = invoke(
            runner, "train", "example1-desk", "-o", tmp_path, "--epochs", "0",
            "--output-format", "json", "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        summary = json.loads(result.output)
        assert summary["epochs"] == 0
        assert summary["final_loss"] is None
        for file in ("trace.json", "trace.csv", "report.json", "checkpoint.jdnn", "observed.jde", "manifest.json"):
            assert (tmp_path / file).exists()

    def test_runs_are_reproducible(self, runner, tmp_path):
        """Test that one config trained twice gives identical traces and reports."""
        for name in ("a", "b"):
            result = invoke(runner, "train", "example1-desk", "-o", tmp_path / name, "--epochs", "3", "--log-level", "ERROR", *TINY)
            assert result.exit_code == 0
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "report.json").read_text() == (b / "report.json").read_text()
        assert json.loads((a / "trace.json").read_text())["losses"] == json.loads((b / "trace.json").read_text())["losses"]
        assert len(pd.read_csv(a / "trace.csv")) == 3

    def test_prior_flag(self, runner, tmp_path):
        """Test that --prior drift trains only the diffusion and jump networks."""
        result = invoke(
            runner, "train", "example2-desk", "-o", tmp_path, "--epochs", "1", "--prior", "drift",
            "--output-format", "json", "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        summary = json.loads(result.output)
        assert summary["prior"] == "drift_given"
        assert summary["report"]["drift_err"] == 0.0

    def test_resume_and_profile(self, runner, tmp_path):
        """Test resuming from a checkpoint and exporting a coefficient profile."""
        first = invoke(runner, "train", "example1-desk", "-o", tmp_path / "first", "--epochs", "2", "--log-level", "ERROR", *TINY)
        assert first.exit_code == 0
        checkpoint = tmp_path / "first" / "checkpoint.jdnn"
        resumed = invoke(
            runner, "train", "example1-desk", "-o", tmp_path / "second", "--epochs", "3",
            "--resume", checkpoint, "--log-level", "ERROR", *TINY,
        )
        assert resumed.exit_code == 0
        trace = pd.read_csv(tmp_path / "second" / "trace.csv")
        assert list(trace["epoch"]) == [3]

        profile_path = tmp_path / "profile.csv"
        result = invoke(
            runner, "export-profile", "example1-desk", "--checkpoint", checkpoint, "--points", "5",
            "-o", profile_path, "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        profile = pd.read_csv(profile_path)
        assert len(profile) == 5
        assert {"f1", "f1_hat", "sigma11_hat", "beta1_1_hat"} <= set(profile.columns)

    def test_resume_beyond_epochs(self, runner, tmp_path):
        """Test that a checkpoint past train.epochs is a configuration error."""
        invoke(runner, "train", "example1-desk", "-o", tmp_path, "--epochs", "2", "--log-level", "ERROR", *TINY)
        result = invoke(
            runner, "train", "example1-desk", "-o", tmp_path / "again", "--epochs", "1",
            "--resume", tmp_path / "checkpoint.jdnn", "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 2

    def test_observed_ensemble_file(self, runner, tmp_path):
        """Test training against a previously simulated ensemble."""
        invoke(runner, "simulate", "example1-desk", "-o", tmp_path / "sim", "--log-level", "ERROR", *TINY)
        result = invoke(
            runner, "train", "example1-desk", "-o", tmp_path / "fit", "--epochs", "1",
            "--ensemble", tmp_path / "sim" / "observed.csv", "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        assert not (tmp_path / "fit" / "observed.jde").exists()


class TestSweep:
    """Test cases for the sweep command."""

    def test_initial_noise_grid(self, runner, tmp_path):
        """Test the initial-noise grid with one repeat per cell."""
        result = invoke(
            runner, "sweep", "example1-desk", "--grid", "initial-noise", "--repeats", "1", "-o", tmp_path,
            "--log-level", "ERROR", "--train.epochs=1", *TINY,
        )
        assert result.exit_code == 0
        table = pd.read_csv(tmp_path / "sweep.csv")
        assert len(table) == 6
        assert sorted(table["initial.stddev"]) == [0.0, 0.2, 0.4, 0.6, 0.8, 1.0]
        assert (table["status"] == "ok").all()
        assert len(pd.read_csv(tmp_path / "sweep_summary.csv")) == 6


class TestDiagnose:
    """Test cases for the diagnose command."""

    def test_wrong_jump_size(self, runner, tmp_path):
        """Test diagnostics of the truth against a halved jump size."""
        result = invoke(
            runner, "diagnose", "example1-desk", "--hat-param", "y0=0.5", "--bootstrap", "5", "-o", tmp_path,
            "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        report = json.loads((tmp_path / "diagnostics.json").read_text())
        assert len(report["per_slice_w2sq"]) == 5
        assert report["lower_bound"] > 0
        assert report["lower_bound_se"] is not None

    def test_ensemble_files(self, runner, tmp_path):
        """Test diagnostics of two ensemble files."""
        invoke(runner, "simulate", "example1-desk", "-o", tmp_path / "a", "--log-level", "ERROR", *TINY)
        invoke(runner, "simulate", "example1-desk", "-o", tmp_path / "b", "--log-level", "ERROR", "--train.seed=5", *TINY)
        result = invoke(
            runner, "diagnose", "example1-desk", "--ensembles", tmp_path / "a" / "observed.jde",
            tmp_path / "b" / "observed.jde", "-o", tmp_path, "--output-format", "json", "--log-level", "ERROR", *TINY,
        )
        assert result.exit_code == 0
        report = json.loads(result.output)
        assert report["lower_bound"] is None
        assert report["decoupled_w2sq"] > 0

    def test_bad_hat_param(self, runner, tmp_path):
        """Test that a malformed --hat-param exits with the configuration code."""
        result = invoke(runner, "diagnose", "example1-desk", "--hat-param", "y0", "-o", tmp_path, *TINY)
        assert result.exit_code == 2


class TestReport:
    """Test cases for report rendering."""

    def test_text_train_report(self):
        """Test the text tables of a training summary."""
        summary = TrainSummary(
            name="demo",
            prior=PriorMode.DRIFT_GIVEN,
            loss_kind=LossKind.DECOUPLED_W2SQ,
            epochs=5,
            final_loss=0.25,
            report=ErrorReport(drift_err=0.0, diffusion_err=0.19, jump_err=None),
            output_dir="runs/demo",
        )
        text = generate_report(summary, "text")
        assert "Training Summary: demo" in text
        assert "0.1900" in text
        assert "undefined" in text

    def test_yaml_diagnostics_report(self):
        """Test a diagnostics report as YAML."""
        report = DiagnosticsReport(per_slice_w2sq=[0.0, 1.0], decoupled_w2sq=1.0)
        assert "decoupled_w2sq: 1.0" in generate_report(report, "yaml")


class TestLogging:
    """Test cases for the log sink."""

    @pytest.fixture
    def ensemble(self):
        return simulate_ensemble(zero_spec(), TimeGrid(T=1.0, N=2), InitialLaw(mean=[0.0]), 3, seed=0)

    def test_debug_adds_location(self, capsys, tmp_path, ensemble):
        """Test that DEBUG shows tagged package records with their origin."""
        assert setup_logging("debug") == "DEBUG"
        write_ensemble_csv(ensemble, tmp_path / "e.csv")
        err = capsys.readouterr().err
        assert "[IO] wrote 3 trajectories" in err
        assert "jdrecon.storage:write_ensemble_csv" in err

    def test_level_applies_to_package_only(self, capsys, tmp_path, ensemble):
        """Test that the level gates package records while other sources stay at WARNING."""
        setup_logging("INFO")
        write_ensemble_csv(ensemble, tmp_path / "e.csv")
        logger.info("outside info")
        logger.warning("outside warning")
        err = capsys.readouterr().err
        assert "[IO]" not in err
        assert "outside info" not in err
        assert "outside warning" in err
        assert "write_ensemble_csv" not in err
