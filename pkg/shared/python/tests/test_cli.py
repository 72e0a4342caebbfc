import json
import os

import pytest

from confined_lsm import __version__
from confined_lsm.cli import EXIT_CODES, exit_code_for, main
from confined_lsm.errors import ConfigParseError, ReflectionCapExceeded, WrongRegime
from confined_lsm.experiments import RUNNERS

SIMULATE = """
    experiment = "simulate"
    seed = 4

    [sim]
    n_particles = 200
    dt = 0.01
    horizon = 0.2
    epsilon = 0.3
    checkpoints = [0.1]
    kernel = { preset = "neg_tanh" }
    initial_law = { std = 2.0 }
"""

INVARIANCE = """
    experiment = "invariance-test"
    seed = 2

    [sim]
    n_particles = 2000
    dt = 0.01
    horizon = 0.5

    [invariance]
    variance_tol = 0.3
    cdf_tol = 0.1
"""


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    monkeypatch.delenv("LSM_SEED", raising=False)
    monkeypatch.delenv("LSM_OUT", raising=False)


def read_bytes(*parts):
    with open(os.path.join(*parts), "rb") as fh:
        return fh.read()


def read_json(*parts):
    with open(os.path.join(*parts)) as fh:
        return json.load(fh)


def test_simulate_is_reproducible(write_toml, tmp_path):
    path = write_toml(SIMULATE)
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "a")]) == 0
    assert main(["simulate", "--config", path, "--out", str(tmp_path / "b"),
                 "--workers", "8"]) == 0
    for name in ("events.csv", os.path.join("checkpoints", "0.1.csv")):
        first = read_bytes(tmp_path, "a", "simulate", name)
        assert first == read_bytes(tmp_path, "b", "simulate", name)
    verdicts = read_json(tmp_path, "a", "simulate", "verdicts.json")["verdicts"]
    assert [(v["name"], v["status"]) for v in verdicts] == [("reflection-invariants", "pass")]


def test_seed_flag_changes_the_run(write_toml, tmp_path):
    path = write_toml(SIMULATE)
    main(["simulate", "--config", path, "--out", str(tmp_path / "a")])
    main(["simulate", "--config", path, "--out", str(tmp_path / "b"), "--seed", "5"])
    summary = read_json(tmp_path, "b", "simulate", "summary.json")
    assert summary["config"]["seed"] == 5 and summary["config"]["sim"]["seed"] == 5
    assert summary["version"] == __version__
    assert read_bytes(tmp_path, "a", "simulate", "events.csv") != \
        read_bytes(tmp_path, "b", "simulate", "events.csv")


def test_invariance_experiment(write_toml, tmp_path):
    code = main(["invariance-test", "--config", write_toml(INVARIANCE),
                 "--out", str(tmp_path)])
    assert code == 0
    verdicts = read_json(tmp_path, "invariance-test", "verdicts.json")["verdicts"]
    by_name = {v["name"]: v for v in verdicts}
    assert set(by_name) == {"invariance", "maxwellian-envelope", "reflection-invariants"}
    assert by_name["invariance"]["statistics"]["expected_variance"] == pytest.approx(1.5)
    assert by_name["maxwellian-envelope"]["status"] == "monitor"
    assert os.path.exists(tmp_path / "invariance-test" / "invariance.csv")


def test_passage_bound_from_flags(tmp_path):
    code = main(["passage-bound", "--out", str(tmp_path), "--paths", "2000", "--dt", "1e-2",
                 "--seed", "3"])
    assert code in (EXIT_CODES["ok"], EXIT_CODES["fail"])
    doc = read_json(tmp_path, "passage-bound", "passage.json")
    assert sorted(doc["rows"], key=int) == ["3", "4", "5", "6"]
    assert doc["bound_constant"] > 0
    assert set(doc["bound_constant_by_scheme"]) == {"adaptive", "tanh_sinh"}
    row = doc["rows"]["4"]
    assert row["bound"] == pytest.approx(doc["bound_constant"] / 16)
    assert doc["config"]["seed"] == 3 and doc["config"]["passage"]["paths"] == 2000


def test_invalid_file_exits_with_config_code(write_toml, tmp_path, capsys):
    path = write_toml('experiment = "simulate"\n[sim]\ndt = 0\n')
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_CODES["config"]
    assert "sim.dt: > 0" in capsys.readouterr().out
    assert not os.path.exists(tmp_path / "simulate")


def test_experiment_must_match_subcommand(write_toml, tmp_path):
    path = write_toml(SIMULATE)
    assert main(["hit-rate", "--config", path, "--out", str(tmp_path)]) == EXIT_CODES["config"]


def test_missing_file_exits_with_io_code(tmp_path):
    code = main(["simulate", "--config", str(tmp_path / "absent.toml")])
    assert code == EXIT_CODES["io"]


def test_bad_flags(write_toml, tmp_path):
    path = write_toml(SIMULATE)
    assert main(["simulate", "--config", path, "--workers", "0"]) == EXIT_CODES["config"]
    assert main(["passage-bound", "--out", str(tmp_path), "--n-min", "5",
                 "--n-max", "2"]) == EXIT_CODES["config"]


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--version"])
    assert info.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_exit_code_mapping():
    assert exit_code_for(ConfigParseError("x.toml", "bad")) == EXIT_CODES["config"]
    assert exit_code_for(WrongRegime("b != 0")) == EXIT_CODES["config"]
    assert exit_code_for(FileNotFoundError("x")) == EXIT_CODES["io"]
    assert exit_code_for(ReflectionCapExceeded(0, 0.0, 64)) == EXIT_CODES["runtime"]
    assert exit_code_for(FloatingPointError("overflow")) == EXIT_CODES["runtime"]


def test_wrong_typed_initial_law_exits_with_config_code(write_toml, tmp_path, capsys):
    path = write_toml('experiment = "simulate"\n[sim.initial_law]\nmargin = "x"\n')
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_CODES["config"]
    assert "sim.initial_law.margin: number" in capsys.readouterr().out


def test_unexpected_runner_error_exits_with_runtime_code(write_toml, tmp_path, monkeypatch):
    def broken(config, out_dir):
        raise TypeError("unsupported operand")

    monkeypatch.setitem(RUNNERS, "simulate", broken)
    path = write_toml(SIMULATE)
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_CODES["runtime"]
    assert exit_code_for(TypeError("x")) == EXIT_CODES["runtime"]
    assert exit_code_for(ValueError("x")) == EXIT_CODES["runtime"]
