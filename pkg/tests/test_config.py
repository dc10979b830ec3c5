import json

import pytest

from src.config import RunConfig, SolverConfig
from src.errors import ConfigError, ExponentOutOfRangeError


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_defaults():
    config = RunConfig.load()
    assert config.n == 3
    assert config.solver.p == 3.7
    assert config.p_schedule == [3.8, 3.75, 3.7, 3.65]
    assert config.K == {"kind": "constant", "value": 1.0}
    assert config.threads >= 1


def test_load_file(tmp_path):
    path = write_config(tmp_path, {"resolution": 8, "solver": {"p": 3.5, "starts": 2}, "K": {"kind": "zn_plus_2"}})
    config = RunConfig.load(path)
    assert config.resolution == 8
    assert isinstance(config.solver, SolverConfig)
    assert config.solver.p == 3.5 and config.solver.starts == 2
    assert not config.has_flat_K


@pytest.mark.parametrize(
    "data",
    [
        {"resolution": 8, "colour": "red"},
        {"solver": {"step": 1.0}},
        {"resolution": 7},
        {"n": 4},
        {"K": {"kind": "sinusoid"}},
        {"solver": {"p": 5.0}},
        {"solver": {"backtrack": 1.5}},
        [1, 2, 3],
    ],
)
def test_invalid_files(tmp_path, data):
    with pytest.raises(ConfigError):
        RunConfig.load(write_config(tmp_path, data))


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{resolution: 8", encoding="utf-8")
    with pytest.raises(ConfigError):
        RunConfig.load(broken)


def test_overrides():
    config = RunConfig.load().apply_overrides(p=3.6, lambdas=(0.1, 0.2), resolution=None, out="elsewhere")
    assert config.solver.p == 3.6
    assert config.lambdas == [0.1, 0.2]
    assert config.resolution == 16
    assert config.out_dir.name == "elsewhere"
    with pytest.raises(ConfigError):
        RunConfig.load().apply_overrides(p=1.0)
    with pytest.raises(ConfigError):
        RunConfig.load().apply_overrides(colour="red")


def test_two_dimensional_runs_skip_exponent_check():
    assert RunConfig.load().apply_overrides(n=2, resolution=64).n == 2


def test_threads_from_environment(monkeypatch):
    monkeypatch.setenv("POISSON_BALL_THREADS", "3")
    assert RunConfig().threads == 3
    assert RunConfig(threads=1).threads == 1
    monkeypatch.setenv("POISSON_BALL_THREADS", "many")
    assert RunConfig().threads >= 1


def test_solver_config():
    cfg = SolverConfig()
    assert cfg.with_exponent(3.65).p == 3.65
    assert cfg.p == 3.7
    with pytest.raises(ExponentOutOfRangeError):
        SolverConfig(p=1.0).validate(3)
    with pytest.raises(ConfigError):
        SolverConfig(max_iter=0).validate(3)
