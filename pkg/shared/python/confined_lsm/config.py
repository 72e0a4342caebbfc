"""
Experiment files: TOML parsing and validation.

An experiment file names one experiment, a master seed, an output
directory and the sections that experiment reads. Every problem in the
file is collected before anything runs; unknown keys are reported with
the closest valid name. See docs/config.md for the full key reference.

Environment overrides: LSM_SEED and LSM_OUT.
"""

import difflib
import os
import re
import sys
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .common import DOMAIN_KINDS
from .diagnostics import FUNCTIONALS
from .drift import VelocityKernel
from .errors import ConfigParseError, ConfigValidationError
from .geometry import DomainGeometry, DomainKind
from .simulator import InitialLawSpec, SimConfig

ENV_SEED = "LSM_SEED"
ENV_OUT = "LSM_OUT"
GRID_NODE_LIMIT = 1_000_000  # phase-space KDE grid of the epsilon study

Problems = List[Tuple[str, str]]

# ==============================================================
# Schema
# ==============================================================

# experiment -> study section it reads (None: [sim] only / no [sim])
EXPERIMENTS: Dict[str, Optional[str]] = {
    "simulate":          None,
    "invariance-test":   "invariance",
    "hit-rate":          "hit_rate",
    "no-permeability":   "no_permeability",
    "chaos-study":       "chaos",
    "epsilon-study":     "epsilon",
    "drift-consistency": "drift_consistency",
    "passage-bound":     "passage",
}

TOP_KEYS = {"experiment", "seed", "out", "workers", "sim"} | {
    s for s in EXPERIMENTS.values() if s}

SIM_DEFAULTS: Dict[str, Any] = {
    "n_particles": 1000,
    "dt": 1e-3,
    "horizon": 1.0,
    "sigma": 1.0,
    "epsilon": 0.2,
    "max_reflections_per_step": 64,
    "record_events": True,
    "checkpoints": [],
    "binned": True,
    "domain": {"kind": "ball", "radius": 1.0, "dim": 2},
    "kernel": {"preset": "zero"},
    "initial_law": {},
}
DOMAIN_KEYS = {"kind", "radius", "dim", "length", "center"}
KERNEL_KEYS = {"preset", "clip"}
LAW_KEYS = {"position", "margin", "point", "velocity", "mean", "std", "velocity_point"}

STUDY_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "invariance": {
        "variance_tol": 0.05, "cdf_tol": 0.02, "shell_width": 0.05, "z_max": 3.0,
        "envelope_bins": 40,
    },
    "hit_rate": {"seeds": 20, "z_max": 4.0},
    "no_permeability": {"shell_widths": [0.02, 0.05, 0.1], "z_max": 3.0},
    "chaos": {"n_grid": [500, 2000, 8000], "seeds": 20, "functional": "tanh_u1"},
    "epsilon": {
        "grid": [0.4, 0.2, 0.1], "reference": 0.05, "seeds": 5, "points_per_axis": 30,
        "bandwidth": None, "alpha": None,
    },
    "drift_consistency": {
        "schedule": [[1000, 0.4], [10000, 0.25], [100000, 0.15]], "seeds": 20,
        "queries": None,
    },
    "passage": {
        "horizon": 1.0, "beta_star": 1.0, "y": None, "v": 0.0, "n_min": 3, "n_max": 6,
        "paths": 100000, "dt": 1e-4, "scheme_tol": 1e-6,
    },
}


@dataclass
class ExperimentConfig:
    """A validated experiment file."""

    experiment: str
    seed: int
    out: str
    workers: int = 1
    sim: Optional[SimConfig] = None
    study: Dict[str, Any] = field(default_factory=dict)
    source: str = ""

    def to_dict(self) -> dict:
        echo = {"experiment": self.experiment, "seed": self.seed, "out": self.out,
                "workers": self.workers}
        if self.sim is not None:
            echo["sim"] = self.sim.to_dict()
        section = EXPERIMENTS[self.experiment]
        if section:
            echo[section] = dict(self.study)
        return echo


# ==============================================================
# Field checks
# ==============================================================

def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _unknown_keys(table: Mapping, allowed, prefix: str, problems: Problems):
    for key in table:
        if key in allowed:
            continue
        close = difflib.get_close_matches(key, sorted(allowed), n=1)
        hint = f" (did you mean '{close[0]}'?)" if close else ""
        problems.append((prefix + key, f"unknown key{hint}"))


def _number(table, key, prefix, problems, positive=False, nonneg=False, integer=False):
    value = table.get(key)
    name = prefix + key
    if integer and not _is_int(value):
        problems.append((name, "integer"))
        return None
    if not _is_number(value):
        problems.append((name, "number"))
        return None
    if positive and not value > 0:
        problems.append((name, "> 0"))
        return None
    if nonneg and not value >= 0:
        problems.append((name, ">= 0"))
        return None
    return value


def _check_law_types(law_raw: Mapping, problems: Problems) -> bool:
    """Type-check initial-law fields; range checks are left to InitialLawSpec."""
    prefix = "sim.initial_law."
    found = []
    for key in ("position", "velocity"):
        if key in law_raw and not isinstance(law_raw[key], str):
            found.append((prefix + key, "string"))
    for key in ("margin", "std"):
        if key in law_raw and not _is_number(law_raw[key]):
            found.append((prefix + key, "number"))
    for key in ("point", "velocity_point"):
        value = law_raw.get(key)
        if key in law_raw and not (isinstance(value, list) and all(map(_is_number, value))):
            found.append((prefix + key, "list of numbers"))
    if "mean" in law_raw:
        mean = law_raw["mean"]
        if not (_is_number(mean) or (isinstance(mean, list) and all(map(_is_number, mean)))):
            found.append((prefix + "mean", "number or list of numbers"))
    problems.extend(found)
    return not found


def _number_list(value, name, problems, positive=True, integer=False, min_len=1):
    if not isinstance(value, list) or len(value) < min_len:
        problems.append((name, f"list of at least {min_len} number(s)"))
        return None
    check = _is_int if integer else _is_number
    if not all(check(v) for v in value) or (positive and not all(v > 0 for v in value)):
        kind = "integers" if integer else "numbers"
        problems.append((name, f"list of positive {kind}" if positive else f"list of {kind}"))
        return None
    return value


# ==============================================================
# Sections
# ==============================================================

def _parse_sim(raw: Mapping, seed: int, problems: Problems) -> Optional[SimConfig]:
    table = {**SIM_DEFAULTS, **raw}
    _unknown_keys(raw, set(SIM_DEFAULTS), "sim.", problems)
    before = len(problems)

    n = _number(table, "n_particles", "sim.", problems, positive=True, integer=True)
    dt = _number(table, "dt", "sim.", problems, positive=True)
    horizon = _number(table, "horizon", "sim.", problems, positive=True)
    sigma = _number(table, "sigma", "sim.", problems, positive=True)
    eps = _number(table, "epsilon", "sim.", problems, positive=True)
    cap = _number(table, "max_reflections_per_step", "sim.", problems, positive=True,
                  integer=True)
    if dt is not None and horizon is not None and horizon < dt:
        problems.append(("sim.horizon", ">= dt"))
    for key in ("record_events", "binned"):
        if not isinstance(table[key], bool):
            problems.append(("sim." + key, "true or false"))
    checkpoints = table["checkpoints"]
    if not isinstance(checkpoints, list) or not all(_is_number(t) for t in checkpoints):
        problems.append(("sim.checkpoints", "list of times"))

    dom_raw = table["domain"] if isinstance(table["domain"], dict) else {}
    if not isinstance(table["domain"], dict):
        problems.append(("sim.domain", "inline table { kind = ..., ... }"))
    _unknown_keys(dom_raw, DOMAIN_KEYS, "sim.domain.", problems)
    domain = None
    kind = dom_raw.get("kind", "ball")
    try:
        if kind == "ball":
            domain = DomainGeometry.ball(dom_raw.get("radius", 1.0), dom_raw.get("dim", 2),
                                         dom_raw.get("center"))
        elif kind == "halfspace":
            domain = DomainGeometry.halfspace(dom_raw.get("dim", 1))
        elif kind == "interval":
            domain = DomainGeometry.interval(dom_raw.get("length", 1.0))
        else:
            kinds = ", ".join(f"'{k}'" for k in DOMAIN_KINDS)
            problems.append(("sim.domain.kind", f"one of {kinds}"))
    except (TypeError, ValueError) as exc:
        problems.append(("sim.domain", str(exc)))

    ker_raw = table["kernel"] if isinstance(table["kernel"], dict) else {}
    _unknown_keys(ker_raw, KERNEL_KEYS, "sim.kernel.", problems)
    kernel = None
    try:
        kernel = VelocityKernel(ker_raw.get("preset", "zero"), ker_raw.get("clip", 1.0))
    except (TypeError, ValueError) as exc:
        problems.append(("sim.kernel", str(exc)))

    law_raw = table["initial_law"] if isinstance(table["initial_law"], dict) else {}
    if not isinstance(table["initial_law"], dict):
        problems.append(("sim.initial_law", "inline table { position = ..., ... }"))
    _unknown_keys(law_raw, LAW_KEYS, "sim.initial_law.", problems)
    law = None
    if _check_law_types(law_raw, problems):
        law_args = {k: (tuple(v) if isinstance(v, list) else v) for k, v in law_raw.items()
                    if k in LAW_KEYS}
        law = InitialLawSpec(**law_args)
        if domain is not None:
            problems.extend(("sim." + f, c) for f, c in law.problems(domain.dim))

    if len(problems) > before or domain is None or kernel is None or law is None:
        return None
    try:
        return SimConfig(
            n_particles=n, domain=domain, epsilon=float(eps), dt=float(dt),
            horizon=float(horizon), sigma=float(sigma), kernel=kernel, initial_law=law,
            seed=seed, max_reflections_per_step=cap, record_events=table["record_events"],
            checkpoints=tuple(checkpoints), binned=table["binned"])
    except ConfigValidationError as exc:
        problems.extend(("sim." + f, c) for f, c in exc.problems)
    return None


def _parse_study(name: str, raw: Mapping, sim: Optional[SimConfig],
                 problems: Problems) -> Dict[str, Any]:
    defaults = STUDY_DEFAULTS[name]
    _unknown_keys(raw, set(defaults), name + ".", problems)
    study = {**defaults, **raw}
    p = name + "."

    if name == "invariance":
        for key in ("variance_tol", "cdf_tol", "shell_width", "z_max"):
            _number(study, key, p, problems, positive=True)
        _number(study, "envelope_bins", p, problems, positive=True, integer=True)
    elif name == "hit_rate":
        _number(study, "seeds", p, problems, positive=True, integer=True)
        _number(study, "z_max", p, problems, positive=True)
    elif name == "no_permeability":
        _number_list(study["shell_widths"], p + "shell_widths", problems)
        _number(study, "z_max", p, problems, positive=True)
    elif name == "chaos":
        _number_list(study["n_grid"], p + "n_grid", problems, integer=True)
        _number(study, "seeds", p, problems, positive=True, integer=True)
        if study["functional"] not in FUNCTIONALS:
            problems.append((p + "functional", f"one of {', '.join(sorted(FUNCTIONALS))}"))
    elif name == "epsilon":
        grid = _number_list(study["grid"], p + "grid", problems)
        if grid and any(b >= a for a, b in zip(grid, grid[1:])):
            problems.append((p + "grid", "strictly decreasing"))
        _number(study, "reference", p, problems, positive=True)
        _number(study, "seeds", p, problems, positive=True, integer=True)
        _number(study, "points_per_axis", p, problems, positive=True, integer=True)
        bw = study["bandwidth"]
        if bw is not None and not (_is_number(bw) and bw > 0) and \
                _number_list(bw, p + "bandwidth", []) is None:
            problems.append((p + "bandwidth", "positive number or list of positive numbers"))
        if study["alpha"] is not None and sim is not None:
            alpha = _number(study, "alpha", p, problems, positive=True)
            if alpha is not None and not alpha > sim.dim + 3:
                problems.append((p + "alpha", f"> d + 3 = {sim.dim + 3}"))
    elif name == "drift_consistency":
        schedule = study["schedule"]
        if not isinstance(schedule, list) or not schedule or not all(
                isinstance(e, list) and len(e) == 2 and _is_int(e[0]) and e[0] > 0
                and _is_number(e[1]) and e[1] > 0 for e in schedule):
            problems.append((p + "schedule", "list of [N, epsilon] pairs"))
        _number(study, "seeds", p, problems, positive=True, integer=True)
        queries = study["queries"]
        if queries is not None and sim is not None and not (
                isinstance(queries, list) and queries and all(
                    isinstance(q, list) and len(q) == sim.dim and all(_is_number(c) for c in q)
                    for q in queries)):
            problems.append((p + "queries", f"list of points with {sim.dim} coordinates"))
    elif name == "passage":
        for key in ("horizon", "beta_star", "dt", "scheme_tol"):
            _number(study, key, p, problems, positive=True)
        _number(study, "v", p, problems)
        if study["y"] is not None:
            _number(study, "y", p, problems, positive=True)
        lo = _number(study, "n_min", p, problems, positive=True, integer=True)
        hi = _number(study, "n_max", p, problems, positive=True, integer=True)
        if lo is not None and hi is not None and hi < lo:
            problems.append((p + "n_max", ">= n_min"))
        _number(study, "paths", p, problems, positive=True, integer=True)
    return study


# ==============================================================
# Entry point
# ==============================================================

def _load_toml(path: str) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            where = re.search(r"line (\d+), column (\d+)", str(exc))
            line, col = (int(where.group(1)), int(where.group(2))) if where else (None, None)
            raise ConfigParseError(path, str(exc), line, col) from exc


def parse_config(path: str, environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """Read and validate an experiment file.

    Raises:
        ConfigParseError: the file is not valid TOML.
        ConfigValidationError: with every (field, constraint) problem found.
        OSError: the file cannot be read.
    """
    environ = os.environ if environ is None else environ
    raw = _load_toml(path)
    problems: Problems = []
    _unknown_keys(raw, TOP_KEYS, "", problems)

    experiment = raw.get("experiment")
    if experiment not in EXPERIMENTS:
        problems.append(("experiment", f"one of {', '.join(EXPERIMENTS)}"))

    seed = raw.get("seed", 0)
    if ENV_SEED in environ:
        try:
            seed = int(environ[ENV_SEED])
        except ValueError:
            problems.append((ENV_SEED, "integer"))
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        problems.append(("seed", "integer in [0, 2**64)"))
        seed = 0
    out = environ.get(ENV_OUT, raw.get("out", "runs"))
    if not isinstance(out, str) or not out:
        problems.append(("out", "non-empty path"))
    workers = raw.get("workers", 1)
    if not _is_int(workers) or workers < 1:
        problems.append(("workers", "integer >= 1"))

    sim = None
    if experiment in EXPERIMENTS and experiment != "passage-bound":
        sim_raw = raw.get("sim", {})
        if not isinstance(sim_raw, dict):
            problems.append(("sim", "table"))
        else:
            sim = _parse_sim(sim_raw, seed, problems)

    study: Dict[str, Any] = {}
    section = EXPERIMENTS.get(experiment)
    if section:
        section_raw = raw.get(section, {})
        if not isinstance(section_raw, dict):
            problems.append((section, "table"))
        else:
            study = _parse_study(section, section_raw, sim, problems)

    if sim is not None and experiment in ("invariance-test", "hit-rate", "no-permeability"):
        law = sim.initial_law
        if not sim.kernel.is_zero:
            problems.append(("sim.kernel.preset", f"'zero' for {experiment}"))
        if sim.domain.kind is DomainKind.HALFSPACE:
            problems.append(("sim.domain.kind", f"'ball' or 'interval' for {experiment}"))
        if law.position != "uniform" or law.margin != 0 or not law.is_centered_gaussian:
            problems.append(("sim.initial_law",
                             f"uniform positions (margin 0) x centred Gaussian for {experiment}"))

    if sim is not None and experiment == "epsilon-study":
        if sim.domain.kind is DomainKind.HALFSPACE:
            problems.append(("sim.domain.kind", "'ball' or 'interval' for epsilon-study"))
        ppa = study.get("points_per_axis")
        if _is_int(ppa) and ppa ** (2 * sim.dim) > GRID_NODE_LIMIT:
            problems.append(("epsilon.points_per_axis",
                             f"points_per_axis^{2 * sim.dim} <= {GRID_NODE_LIMIT}"))

    if sim is not None and experiment == "drift-consistency":
        law = sim.initial_law
        if sim.kernel.is_zero:
            problems.append(("sim.kernel.preset", "non-zero kernel for drift-consistency"))
        if sim.domain.kind is DomainKind.HALFSPACE:
            problems.append(("sim.domain.kind", "'ball' or 'interval' for drift-consistency"))
        if law.position != "uniform" or law.velocity != "gaussian":
            problems.append(("sim.initial_law",
                             "uniform positions x Gaussian velocities for drift-consistency"))

    if problems:
        raise ConfigValidationError(problems)
    return ExperimentConfig(experiment, seed, out, workers, sim, study, source=str(path))


def passage_config(overrides: Mapping[str, Any], seed: int = 0, out: str = "runs",
                   workers: int = 1) -> ExperimentConfig:
    """A passage-bound experiment built from flags alone (no file).

    Raises:
        ConfigValidationError: with every (field, constraint) problem found.
    """
    problems: Problems = []
    study = _parse_study("passage", dict(overrides), None, problems)
    if not _is_int(seed) or not 0 <= seed < 2 ** 64:
        problems.append(("seed", "integer in [0, 2**64)"))
    if not _is_int(workers) or workers < 1:
        problems.append(("workers", "integer >= 1"))
    if problems:
        raise ConfigValidationError(problems)
    return ExperimentConfig("passage-bound", seed, out, workers, None, study, source="<flags>")
