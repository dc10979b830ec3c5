import json
import logging
from types import SimpleNamespace

import numpy as np
import pytest

import cli
import main as runner
from src import experiments
from src.bubble import TrialQuadrature
from src.config import RunConfig
from src.experiments import ExperimentResult, ExperimentRunner
from src.functional import sharp_constant


def read_report(out):
    return json.loads((out / "report.json").read_text(encoding="utf-8"))


def test_version(capsys):
    assert cli.main(["--version"]) == 0
    assert "1.0.0" in capsys.readouterr().out


def test_usage_errors():
    assert cli.main([]) == 1
    assert cli.main(["unknown-command"]) == 1
    assert cli.main(["solve", "--K", "sinusoid"]) == 1


def test_kazdan_warner_flags_height_function(tmp_path):
    out = tmp_path / "kw"
    code = cli.main(["kazdan-warner", "--K", "zn_plus_2", "--v", "constant", "--resolution", "12", "--out", str(out)])
    assert code == 0
    report = read_report(out)
    assert report["command"] == "kazdan-warner"
    assert report["checks"] == {"basis_complete": True}
    assert report["results"]["flag"] is True
    assert report["config"]["K"] == {"kind": "zn_plus_2"}


def test_bad_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"resolution": 9}), encoding="utf-8")
    assert cli.main(["kazdan-warner", "--config", str(path), "--out", str(tmp_path)]) == 1


def test_wrong_dimension_is_an_error(tmp_path):
    out = tmp_path / "wrong"
    assert cli.main(["carleman", "--n", "3", "--out", str(out)]) == 1
    assert not (out / "report.json").exists()


def test_carleman_in_the_plane(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"n": 2, "resolution": 64, "samples": 5}), encoding="utf-8")
    out = tmp_path / "carleman"
    assert cli.main(["carleman", "--config", str(path), "--out", str(out)]) == 0
    report = read_report(out)
    assert all(report["checks"].values())
    assert report["results"]["samples"] == 5


def test_failed_check_exits_with_two(tmp_path, monkeypatch):
    def failing(self):
        result = ExperimentResult("kazdan-warner")
        result.checks = {"basis_complete": False}
        return result

    monkeypatch.setattr(ExperimentRunner, "kazdan_warner", failing)
    out = tmp_path / "fail"
    assert cli.main(["kazdan-warner", "--out", str(out)]) == 2
    assert read_report(out)["checks"] == {"basis_complete": False}


@pytest.mark.slow
def test_blowup_diagnostic(tmp_path):
    out = tmp_path / "blowup"
    assert cli.main(["blowup-diagnostic", "--out", str(out)]) == 0
    assert read_report(out)["results"]["concentrating"]["concentrated"] is True


def test_trial_energy_csv_columns(tmp_path, monkeypatch):
    omega = 4 * np.pi / 3
    monkeypatch.setattr(
        experiments, "trial_energy", lambda lam, n, quad: 2 * (omega + 12.7 * lam ** 2 - 42.5 * lam ** 3)
    )
    monkeypatch.setattr(experiments, "trial_rayleigh", lambda lam, K, center: SimpleNamespace(quotient=0.07))
    out = tmp_path / "trial"
    code = cli.main(["trial-energy", "--lambda", "0.05,0.075,0.1,0.15", "--resolution", "8", "--out", str(out)])
    assert code == 0
    lines = (out / "trial_energy.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "lambda,E,deficit,resolution"
    assert len(lines) == 5
    assert {line.split(",")[3] for line in lines[1:]} == {TrialQuadrature().refined().label}
    assert read_report(out)["results"]["exponent"] == pytest.approx(2.0, abs=1e-6)


@pytest.mark.slow
def test_verify_inequality_panel_at_resolution_16(tmp_path):
    config = RunConfig(resolution=16, samples=200, out=str(tmp_path / "verify"))
    result = ExperimentRunner(config).verify_inequality()
    assert result.results["samples"] == 200
    assert result.results["ratio_max"] <= sharp_constant(3) * (1 + 1e-6)
    assert result.passed


@pytest.mark.slow
def test_verify_inequality_command(tmp_path):
    out = tmp_path / "verify"
    assert cli.main(["verify-inequality", "--n", "3", "--resolution", "16", "--out", str(out)]) == 0
    assert all(read_report(out)["checks"].values())


def test_setup_logging_only_configures_root():
    runner.setup_logging(verbose=True)
    assert logging.getLogger().level == logging.DEBUG
    runner.setup_logging()
    assert logging.getLogger().level == logging.INFO
    assert logging.getLogger("src.solver").level == logging.NOTSET
