"""
N-particle confined Lagrangian stochastic system.

Each step is a Lie splitting:
1. Phase A -- every velocity gets B_eps[x_i; snapshot] dt + sigma sqrt(dt) xi_i,
   with the drift computed from one frozen snapshot of all particles.
2. Phase B -- exact ballistic transport for dt with specular reflections,
   accumulating the jump process k and logging every boundary event.

The Brownian block of step s is drawn from Philox counter window s of the
(seed, brownian) stream, one row per particle id, so a run does not depend
on the worker count.

Provides:
- InitialLawSpec, SimConfig, ParticleState, SystemState
- BoundaryEvent, EventLog, RunLedger, RunRecord
- sample_initial(), transport(), step(), run()
- pathwise_identity_check(), jump_histogram(), jump_count_tail()
"""

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np

from .common import (
    MAX_REFLECTIONS_PER_STEP, STREAM_BROWNIAN, STREAM_INITIAL,
    checkpoint_step, philox_generator, step_count,
)
from .drift import (
    EmpiricalSnapshot, GaussianVelocity, MollifierSpec, ProductDensity,
    UniformPosition, VelocityKernel, binned_smoothed_drift, smoothed_drift,
)
from .errors import (
    ConfigValidationError, MissingIncrements, ReflectionCapExceeded,
    StartsOutside, UnsupportedDensity,
)
from .geometry import (
    DomainGeometry, DomainKind, normals_at, exit_times, hit_points,
    reflection_jump, sample_uniform, signed_distance,
)

logger = logging.getLogger(__name__)


# ==============================================================
# Configuration types
# ==============================================================

@dataclass(frozen=True)
class InitialLawSpec:
    """Product initial law: position law x velocity law.

    position: "uniform" over {signed_distance >= margin} or "point" at ``point``.
    velocity: "gaussian" N(mean, std^2 I) or "point" at ``velocity_point``.
    """

    position: str = "uniform"
    margin: float = 0.0
    point: Optional[Tuple[float, ...]] = None
    velocity: str = "gaussian"
    mean: Union[float, Tuple[float, ...]] = 0.0
    std: float = 1.0
    velocity_point: Optional[Tuple[float, ...]] = None

    def problems(self, dim: int) -> List[Tuple[str, str]]:
        found = []
        if self.position not in ("uniform", "point"):
            found.append(("initial_law.position", "one of 'uniform', 'point'"))
        if self.velocity not in ("gaussian", "point"):
            found.append(("initial_law.velocity", "one of 'gaussian', 'point'"))
        if self.margin < 0:
            found.append(("initial_law.margin", ">= 0"))
        if self.position == "point" and (self.point is None or len(self.point) != dim):
            found.append(("initial_law.point", f"list of {dim} coordinates"))
        if self.velocity == "point" and (
                self.velocity_point is None or len(self.velocity_point) != dim):
            found.append(("initial_law.velocity_point", f"list of {dim} coordinates"))
        if self.velocity == "gaussian":
            if self.std < 0:
                found.append(("initial_law.std", ">= 0"))
            if np.ndim(self.mean) == 1 and len(self.mean) != dim:
                found.append(("initial_law.mean", f"scalar or list of {dim} values"))
        return found

    def mean_vector(self, dim: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.mean, dtype=float), (dim,)).copy()

    @property
    def is_centered_gaussian(self) -> bool:
        return self.velocity == "gaussian" and not np.any(np.asarray(self.mean, dtype=float))

    def as_density(self, dom: DomainGeometry) -> ProductDensity:
        """The law as a closed-form density, for exact_drift."""
        if self.position != "uniform" or self.velocity != "gaussian":
            raise UnsupportedDensity(
                f"point masses have no density ({self.position} x {self.velocity})")
        return ProductDensity(
            UniformPosition(dom, self.margin),
            GaussianVelocity(tuple(self.mean_vector(dom.dim)), float(self.std)))


@dataclass(frozen=True)
class SimConfig:
    """Full description of one particle run."""

    n_particles: int
    domain: DomainGeometry
    epsilon: float
    dt: float
    horizon: float
    sigma: float
    kernel: VelocityKernel = field(default_factory=VelocityKernel)
    initial_law: InitialLawSpec = field(default_factory=InitialLawSpec)
    seed: int = 0
    max_reflections_per_step: int = MAX_REFLECTIONS_PER_STEP
    record_events: bool = True
    checkpoints: Tuple[float, ...] = ()
    binned: bool = True

    def __post_init__(self):
        object.__setattr__(self, "checkpoints", tuple(float(t) for t in self.checkpoints))
        found = self.problems()
        if found:
            raise ConfigValidationError(found)
        if self.sigma == 0:
            logger.warning("sigma = 0: deterministic billiard mode, outside the sigma > 0 hypothesis")

    def problems(self) -> List[Tuple[str, str]]:
        found = []
        if self.n_particles < 1:
            found.append(("n_particles", ">= 1"))
        if not self.dt > 0:
            found.append(("dt", "> 0"))
        if not self.horizon >= self.dt:
            found.append(("horizon", ">= dt"))
        if not self.sigma >= 0:
            found.append(("sigma", ">= 0"))
        if not self.epsilon > 0:
            found.append(("epsilon", "> 0"))
        if not 0 <= self.seed < 2 ** 64:
            found.append(("seed", "integer in [0, 2**64)"))
        if self.max_reflections_per_step < 1:
            found.append(("max_reflections_per_step", ">= 1"))
        for t in self.checkpoints:
            if not 0 <= t <= self.horizon:
                found.append(("checkpoints", f"times in [0, horizon], got {t}"))
        found.extend(self.initial_law.problems(self.domain.dim))
        return found

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_steps(self) -> int:
        return step_count(self.horizon, self.dt)

    @property
    def mollifier(self) -> MollifierSpec:
        return MollifierSpec(self.epsilon, self.dim)

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        dom = self.domain
        domain = {"kind": dom.kind.value, "dim": dom.dim}
        if dom.kind is DomainKind.BALL:
            domain.update(radius=dom.radius, center=list(dom.center))
        elif dom.kind is DomainKind.INTERVAL:
            domain.update(length=dom.length)
        law = dataclasses.asdict(self.initial_law)
        return {
            "n_particles": self.n_particles, "domain": domain, "epsilon": self.epsilon,
            "dt": self.dt, "horizon": self.horizon, "sigma": self.sigma,
            "kernel": {"preset": self.kernel.preset, "clip": self.kernel.clip},
            "initial_law": {k: (list(v) if isinstance(v, tuple) else v) for k, v in law.items()},
            "seed": self.seed, "max_reflections_per_step": self.max_reflections_per_step,
            "record_events": self.record_events, "checkpoints": list(self.checkpoints),
            "binned": self.binned,
        }


# ==============================================================
# State types
# ==============================================================

@dataclass
class ParticleState:
    x: np.ndarray
    u: np.ndarray
    k: np.ndarray
    jumps: int


@dataclass
class SystemState:
    """All particles as (N, d) arrays, at step index ``step``."""

    x: np.ndarray
    u: np.ndarray
    k: np.ndarray
    jumps: np.ndarray
    step: int = 0
    time: float = 0.0

    @property
    def size(self) -> int:
        return self.x.shape[0]

    def particle(self, i: int) -> ParticleState:
        return ParticleState(self.x[i].copy(), self.u[i].copy(), self.k[i].copy(),
                             int(self.jumps[i]))

    def copy(self) -> "SystemState":
        return SystemState(self.x.copy(), self.u.copy(), self.k.copy(), self.jumps.copy(),
                           self.step, self.time)


@dataclass
class BoundaryEvent:
    t: float
    particle: int
    hit: np.ndarray
    normal: np.ndarray
    u_minus: np.ndarray
    u_plus: np.ndarray


class EventLog:
    """Column store of boundary events, ordered by step, then particle id,
    then reflection order within the step."""

    COLUMNS = ("t", "particle", "hit", "normal", "u_minus", "u_plus")

    def __init__(self, dim: int):
        self.dim = dim
        self._batches: List[Tuple[np.ndarray, ...]] = []
        self._cache: Optional[Dict[str, np.ndarray]] = None

    def append(self, t, particle, hit, normal, u_minus, u_plus):
        if len(t):
            self._batches.append((t, particle, hit, normal, u_minus, u_plus))
            self._cache = None

    @property
    def columns(self) -> Dict[str, np.ndarray]:
        if self._cache is None:
            if self._batches:
                parts = list(zip(*self._batches))
                self._cache = {name: np.concatenate(part)
                               for name, part in zip(self.COLUMNS, parts)}
            else:
                d = self.dim
                self._cache = {"t": np.zeros(0), "particle": np.zeros(0, dtype=np.int64),
                               "hit": np.zeros((0, d)), "normal": np.zeros((0, d)),
                               "u_minus": np.zeros((0, d)), "u_plus": np.zeros((0, d))}
        return self._cache

    def __len__(self) -> int:
        return int(sum(len(b[0]) for b in self._batches))

    def __getitem__(self, i: int) -> BoundaryEvent:
        c = self.columns
        return BoundaryEvent(float(c["t"][i]), int(c["particle"][i]), c["hit"][i],
                             c["normal"][i], c["u_minus"][i], c["u_plus"][i])

    def __iter__(self) -> Iterator[BoundaryEvent]:
        for i in range(len(self)):
            yield self[i]

    def reconstruct_k(self, n_particles: int) -> np.ndarray:
        """Sum of -2(u-.n)n per particle, added in log order."""
        c = self.columns
        k = np.zeros((n_particles, self.dim))
        np.add.at(k, c["particle"], reflection_jump(c["u_minus"], c["normal"]))
        return k

    def hits_per_particle(self, n_particles: int, horizon: float = math.inf) -> np.ndarray:
        c = self.columns
        keep = c["t"] <= horizon
        return np.bincount(c["particle"][keep], minlength=n_particles)


@dataclass
class RunLedger:
    """Per-run bookkeeping filled by step(): events and the velocity ledgers
    sum(B dt) and sum(sigma sqrt(dt) xi)."""

    events: EventLog
    drift_integral: np.ndarray
    noise_integral: np.ndarray

    @classmethod
    def empty(cls, n: int, dim: int) -> "RunLedger":
        return cls(EventLog(dim), np.zeros((n, dim)), np.zeros((n, dim)))


@dataclass
class RunRecord:
    config: SimConfig
    initial: SystemState
    final: SystemState
    checkpoints: Dict[float, SystemState]
    events: Optional[EventLog]
    drift_integral: Optional[np.ndarray]
    noise_integral: Optional[np.ndarray]
    wall_time: float
    steps: int


# ==============================================================
# Initial law
# ==============================================================

def sample_initial(law: InitialLawSpec, dom: DomainGeometry, n: int, seed: int) -> SystemState:
    """N i.i.d. draws from ``law`` with k = 0 and no jumps.

    Raises:
        InfeasibleMargin: a uniform law's margin reaches the inradius.
        StartsOutside: a point-mass position lies outside the domain.
    """
    rng = philox_generator(seed, STREAM_INITIAL)
    d = dom.dim
    if law.position == "uniform":
        x = sample_uniform(dom, rng, n, law.margin)
    else:
        point = np.asarray(law.point, dtype=float)
        dist = signed_distance(dom, point)
        if dist < -dom.tol_boundary:
            raise StartsOutside(f"initial point {point.tolist()} is outside {dom.describe()}")
        x = np.tile(point, (n, 1))
    if law.velocity == "gaussian":
        u = law.mean_vector(d) + law.std * rng.standard_normal((n, d))
    else:
        u = np.tile(np.asarray(law.velocity_point, dtype=float), (n, 1))
    return SystemState(x, u, np.zeros((n, d)), np.zeros(n, dtype=np.int64))


# ==============================================================
# Time stepping
# ==============================================================

def transport(dom: DomainGeometry, x: np.ndarray, u: np.ndarray, k: np.ndarray,
              jumps: np.ndarray, dt: float, t0: float, cap: int,
              events: Optional[EventLog] = None):
    """Move every particle ballistically for dt, reflecting at the wall.

    x, u, k and jumps are updated in place. A hit with u.n <= 0 (grazing)
    is not a reflection: the particle finishes its flight unchanged.

    Raises:
        ReflectionCapExceeded: a particle reflects more than ``cap`` times.
    """
    n = x.shape[0]
    remaining = np.full(n, dt)
    count = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    batches = []
    while active.size:
        s = exit_times(dom, x[active], u[active])
        hitting = s <= remaining[active]
        free = active[~hitting]
        x[free] += remaining[free, None] * u[free]

        idx, s = active[hitting], s[hitting]
        if idx.size == 0:
            break
        hit = hit_points(dom, x[idx], u[idx], s)
        normal = normals_at(dom, hit)
        un = np.einsum("ij,ij->i", u[idx], normal)
        grazing = un <= 0.0
        if np.any(grazing):
            g = idx[grazing]
            x[g] += remaining[g, None] * u[g]
            idx, s, hit, normal = idx[~grazing], s[~grazing], hit[~grazing], normal[~grazing]

        u_minus = u[idx]
        jump = reflection_jump(u_minus, normal)
        u_plus = u_minus + jump
        t_hit = t0 + (dt - remaining[idx]) + s
        x[idx] = hit
        u[idx] = u_plus
        k[idx] += jump
        jumps[idx] += 1
        remaining[idx] -= s
        count[idx] += 1
        if events is not None:
            batches.append((t_hit, idx, hit, normal, u_minus, u_plus))
        over = count[idx] > cap
        if np.any(over):
            raise ReflectionCapExceeded(int(idx[np.argmax(over)]), t0, cap)
        active = idx

    if events is not None and batches:
        cols = [np.concatenate(col) for col in zip(*batches)]
        order = np.argsort(cols[1], kind="stable")
        events.append(*(c[order] for c in cols))


def step(system: SystemState, cfg: SimConfig, workers: int = 1,
         ledger: Optional[RunLedger] = None) -> SystemState:
    """Advance the system by one step of length cfg.dt.

    Phase A evaluates every drift from the snapshot taken at step start;
    Phase B transports with reflections. Returns a new SystemState.
    """
    n, d = system.x.shape
    rng = philox_generator(cfg.seed, STREAM_BROWNIAN, counter=system.step)
    xi = rng.standard_normal((n, d))

    if cfg.kernel.is_zero:
        drift = np.zeros((n, d))
    else:
        snap = EmpiricalSnapshot.freeze(system.x, system.u)
        if cfg.binned:
            drift = binned_smoothed_drift(system.x, snap, cfg.mollifier, cfg.kernel,
                                          cfg.domain, workers=workers)
        else:
            drift = smoothed_drift(system.x, snap, cfg.mollifier, cfg.kernel, cfg.domain)

    db = drift * cfg.dt
    dw = cfg.sigma * math.sqrt(cfg.dt) * xi
    x = system.x.copy()
    u = system.u + db + dw
    k = system.k.copy()
    jumps = system.jumps.copy()
    transport(cfg.domain, x, u, k, jumps, cfg.dt, system.time, cfg.max_reflections_per_step,
              events=ledger.events if ledger is not None else None)
    if ledger is not None:
        ledger.drift_integral += db
        ledger.noise_integral += dw
    next_step = system.step + 1
    return SystemState(x, u, k, jumps, next_step, next_step * cfg.dt)


def run(cfg: SimConfig, workers: int = 1) -> RunRecord:
    """Run ceil(T/dt) steps from a fresh draw of the initial law."""
    if cfg.domain.kind is DomainKind.HALFSPACE:
        logger.warning("half-space domain: free-Langevin comparison run, not a compact domain")
    started = time.perf_counter()
    state = sample_initial(cfg.initial_law, cfg.domain, cfg.n_particles, cfg.seed)
    initial = state.copy()
    ledger = RunLedger.empty(cfg.n_particles, cfg.dim) if cfg.record_events else None

    wanted: Dict[int, List[float]] = {}
    for t in cfg.checkpoints:
        wanted.setdefault(checkpoint_step(t, cfg.dt), []).append(t)
    snapshots: Dict[float, SystemState] = {}
    for t in wanted.get(0, []):
        snapshots[t] = state.copy()

    n_steps = cfg.n_steps
    logger.info("run: N=%d, %s, kernel=%s, eps=%g, dt=%g, %d steps, seed=%d",
                cfg.n_particles, cfg.domain.describe(), cfg.kernel.describe(),
                cfg.epsilon, cfg.dt, n_steps, cfg.seed)
    for _ in range(n_steps):
        state = step(state, cfg, workers=workers, ledger=ledger)
        logger.debug("step %d done, t=%g", state.step, state.time)
        for t in wanted.get(state.step, []):
            snapshots[t] = state.copy()

    wall = time.perf_counter() - started
    logger.info("run finished in %.2fs: %d boundary events, max jumps %d", wall,
                len(ledger.events) if ledger else -1, int(state.jumps.max(initial=0)))
    return RunRecord(
        config=cfg, initial=initial, final=state, checkpoints=snapshots,
        events=ledger.events if ledger else None,
        drift_integral=ledger.drift_integral if ledger else None,
        noise_integral=ledger.noise_integral if ledger else None,
        wall_time=wall, steps=n_steps)


# ==============================================================
# Run-level checks
# ==============================================================

def pathwise_identity_check(record: RunRecord) -> float:
    """max_i |u_i(T) - u_i(0) - sum B dt - sum sigma sqrt(dt) xi - k_i(T)|.

    Raises:
        MissingIncrements: the run was made without record_events.
    """
    if record.drift_integral is None or record.noise_integral is None:
        raise MissingIncrements("run was made with record_events = false; no increment ledgers")
    residual = (record.final.u - record.initial.u - record.drift_integral
                - record.noise_integral - record.final.k)
    return float(np.max(np.abs(residual), initial=0.0))


def jump_histogram(state: SystemState) -> np.ndarray:
    """Particle counts by number of reflections: entry j counts jumps == j."""
    return np.bincount(state.jumps, minlength=1)


def jump_count_tail(state: SystemState, n: int) -> Tuple[float, float]:
    """Fraction of particles with at least n reflections and its binomial SE."""
    p = float(np.mean(state.jumps >= n))
    return p, math.sqrt(p * (1.0 - p) / state.size)
