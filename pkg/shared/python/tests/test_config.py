import pytest

from confined_lsm.config import GRID_NODE_LIMIT, parse_config, passage_config
from confined_lsm.errors import ConfigParseError, ConfigValidationError
from confined_lsm.geometry import DomainKind


def problems_of(path, environ=None):
    with pytest.raises(ConfigValidationError) as info:
        parse_config(path, environ={} if environ is None else environ)
    return info.value.problems


def test_minimal_file(write_toml):
    cfg = parse_config(write_toml('experiment = "simulate"\n'), environ={})
    assert cfg.experiment == "simulate"
    assert cfg.seed == 0 and cfg.out == "runs" and cfg.workers == 1
    assert cfg.sim.domain.kind is DomainKind.BALL
    assert cfg.sim.kernel.is_zero
    assert cfg.study == {}


def test_full_sim_section(write_toml):
    path = write_toml("""
        experiment = "simulate"
        seed = 9
        workers = 4

        [sim]
        n_particles = 500
        dt = 0.01
        horizon = 0.5
        epsilon = 0.1
        checkpoints = [0.25]
        domain = { kind = "interval", length = 2.0 }
        kernel = { preset = "clipped_linear", clip = 3.0 }
        initial_law = { margin = 0.1, mean = 0.5, std = 2.0 }
    """)
    cfg = parse_config(path, environ={})
    sim = cfg.sim
    assert (sim.n_particles, sim.dt, sim.horizon, sim.seed) == (500, 0.01, 0.5, 9)
    assert sim.domain.kind is DomainKind.INTERVAL and sim.domain.length == 2.0
    assert sim.kernel.preset == "clipped_linear" and sim.kernel.clip == 3.0
    assert sim.initial_law.margin == 0.1
    assert sim.checkpoints == (0.25,)
    assert cfg.workers == 4
    assert cfg.to_dict()["sim"]["domain"] == {"kind": "interval", "dim": 1, "length": 2.0}


def test_nonpositive_dt(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\ndt = 0\n')
    assert ("sim.dt", "> 0") in problems_of(path)


def test_every_problem_is_reported(write_toml):
    path = write_toml("""
        experiment = "simulate"
        workers = 0
        [sim]
        n_particles = -1
        sigma = 0.0
        record_events = "yes"
    """)
    fields = {f for f, _ in problems_of(path)}
    assert {"workers", "sim.n_particles", "sim.sigma", "sim.record_events"} <= fields


def test_unknown_key_suggestion(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\nepsilonn = 0.1\n')
    assert ("sim.epsilonn", "unknown key (did you mean 'epsilon'?)") in problems_of(path)


def test_unknown_domain_kind(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\ndomain = { kind = "torus" }\n')
    assert ("sim.domain.kind", "one of 'ball', 'halfspace', 'interval'") in problems_of(path)


@pytest.mark.parametrize("line, expected", [
    ('margin = "x"', ("sim.initial_law.margin", "number")),
    ("point = 3", ("sim.initial_law.point", "list of numbers")),
    ('std = "1"', ("sim.initial_law.std", "number")),
    ('mean = ["a", 0.0]', ("sim.initial_law.mean", "number or list of numbers")),
    ("position = 1", ("sim.initial_law.position", "string")),
])
def test_initial_law_field_types(write_toml, line, expected):
    path = write_toml(f'experiment = "simulate"\n[sim.initial_law]\n{line}\n')
    assert expected in problems_of(path)


def test_initial_law_types_reported_with_other_problems(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\ndt = 0\n'
                      '[sim.initial_law]\nmargin = "x"\nstd = "1"\n')
    found = problems_of(path)
    assert {("sim.dt", "> 0"), ("sim.initial_law.margin", "number"),
            ("sim.initial_law.std", "number")} <= set(found)


def test_initial_law_must_be_a_table(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\ninitial_law = 3\n')
    assert ("sim.initial_law", "inline table { position = ..., ... }") in problems_of(path)


def test_checkpoint_past_horizon(write_toml):
    path = write_toml('experiment = "simulate"\n[sim]\nhorizon = 1.0\ncheckpoints = [5.0]\n')
    assert ("sim.checkpoints", "times in [0, horizon], got 5.0") in problems_of(path)


def test_unknown_experiment(write_toml):
    fields = {f for f, _ in problems_of(write_toml('experiment = "sweep"\n'))}
    assert "experiment" in fields


def test_parse_error_has_location(write_toml):
    path = write_toml('experiment = "simulate"\nseed = = 1\n')
    with pytest.raises(ConfigParseError) as info:
        parse_config(path, environ={})
    assert info.value.line == 2
    assert str(info.value).startswith(f"{path}:2")


def test_missing_file(tmp_path):
    with pytest.raises(OSError):
        parse_config(str(tmp_path / "absent.toml"), environ={})


def test_environment_overrides(write_toml):
    path = write_toml('experiment = "simulate"\nseed = 1\nout = "a"\n')
    cfg = parse_config(path, environ={"LSM_SEED": "42", "LSM_OUT": "elsewhere"})
    assert cfg.seed == 42 and cfg.sim.seed == 42
    assert cfg.out == "elsewhere"
    assert ("LSM_SEED", "integer") in problems_of(path, {"LSM_SEED": "forty"})


def test_invariance_needs_free_regime(write_toml):
    path = write_toml("""
        experiment = "invariance-test"
        [sim]
        kernel = { preset = "neg_tanh" }
        initial_law = { margin = 0.2 }
    """)
    found = problems_of(path)
    assert ("sim.kernel.preset", "'zero' for invariance-test") in found
    assert any(f == "sim.initial_law" for f, _ in found)


def test_study_defaults_and_overrides(write_toml):
    path = write_toml('experiment = "hit-rate"\n[hit_rate]\nseeds = 5\n')
    cfg = parse_config(path, environ={})
    assert cfg.study == {"seeds": 5, "z_max": 4.0}
    assert cfg.to_dict()["hit_rate"]["seeds"] == 5


def test_epsilon_grid_limits(write_toml):
    path = write_toml("""
        experiment = "epsilon-study"
        [epsilon]
        grid = [0.1, 0.2]
        points_per_axis = 40
    """)
    found = problems_of(path)
    assert ("epsilon.grid", "strictly decreasing") in found
    assert ("epsilon.points_per_axis", f"points_per_axis^4 <= {GRID_NODE_LIMIT}") in found


def test_epsilon_weight_exponent(write_toml):
    path = write_toml('experiment = "epsilon-study"\n[epsilon]\nalpha = 4.0\n')
    assert ("epsilon.alpha", "> d + 3 = 5") in problems_of(path)


def test_drift_consistency_needs_interaction(write_toml):
    path = write_toml("""
        experiment = "drift-consistency"
        [drift_consistency]
        queries = [[0.0]]
    """)
    found = problems_of(path)
    assert ("sim.kernel.preset", "non-zero kernel for drift-consistency") in found
    assert ("drift_consistency.queries", "list of points with 2 coordinates") in found


def test_passage_file_has_no_sim(write_toml):
    cfg = parse_config(write_toml('experiment = "passage-bound"\n[passage]\npaths = 1000\n'),
                       environ={})
    assert cfg.sim is None
    assert cfg.study["paths"] == 1000 and cfg.study["n_min"] == 3


def test_passage_config_from_flags():
    cfg = passage_config({"horizon": 0.5, "paths": 2000}, seed=7)
    assert cfg.source == "<flags>"
    assert cfg.study["horizon"] == 0.5 and cfg.study["beta_star"] == 1.0
    with pytest.raises(ConfigValidationError) as info:
        passage_config({"n_min": 4, "n_max": 2, "dt": -1.0})
    assert ("passage.n_max", ">= n_min") in info.value.problems
    assert ("passage.dt", "> 0") in info.value.problems
