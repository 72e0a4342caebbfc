"""
Statistical verification layer over particle runs.

Provides:
- WeightFunction -- omega(u) = (1 + |u|^2)^(alpha/2), alpha > d + 3
- sliced_w1() -- sliced Wasserstein-1 between phase-space samples
- mean_no_permeability() -- shell estimate of E[U.n | X near the wall]
- predicted_boundary_flux(), boundary_hit_rate(), boundary_flux_moment()
- silverman_bandwidth(), GaussianKde, kde_density()
- PhaseSpaceGrid, epsilon_convergence_study()
- maxwellian_envelope_check() (monitoring only)
- pair_covariance(), chaoticity_probe(), chaos_study()
- drift_consistency_study()

Everything here is post-processing of immutable records, except the two
study drivers that launch their own runs.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm, wasserstein_distance

from .common import STREAM_PROJECTIONS, philox_generator
from .drift import (
    EmpiricalSnapshot, MollifierSpec, PAIR_BLOCK, VelocityKernel, binned_smoothed_drift,
    exact_drift,
)
from .errors import EmptySample, WrongRegime
from .geometry import (
    DomainGeometry, DomainKind, boundary_normals, signed_distance, surface_to_volume,
)
from .simulator import (
    EventLog, InitialLawSpec, SimConfig, SystemState, run, sample_initial,
)

logger = logging.getLogger(__name__)


# ==============================================================
# Types
# ==============================================================

@dataclass(frozen=True)
class WeightFunction:
    """omega(u) = (1 + |u|^2)^(alpha/2) on R^d."""

    alpha: float
    dim: int

    def __post_init__(self):
        if not self.alpha > self.dim + 3:
            raise ValueError(
                f"weight exponent must exceed d + 3 = {self.dim + 3}, got {self.alpha}")

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return (1.0 + np.sum(u * u, axis=-1)) ** (0.5 * self.alpha)


@dataclass
class ShellEstimate:
    delta: float
    count: int
    estimate: float
    std_error: float

    @property
    def defined(self) -> bool:
        return self.count > 0

    def within(self, z: float) -> bool:
        """|estimate| <= z standard errors (False when undefined)."""
        if not self.defined or not np.isfinite(self.std_error):
            return False
        return abs(self.estimate) <= z * self.std_error


@dataclass
class HitRateEstimate:
    empirical: float
    std_error: float
    predicted: float
    z: float
    n_particles: int
    weight: str = "count"


def phase_space_points(state) -> np.ndarray:
    """(N, 2d) array [x | u] of a SystemState or EmpiricalSnapshot."""
    if isinstance(state, EmpiricalSnapshot):
        return np.hstack([state.positions, state.velocities])
    return np.hstack([state.x, state.u])


def snapshot_of(state: SystemState) -> EmpiricalSnapshot:
    return EmpiricalSnapshot.freeze(state.x, state.u)


# ==============================================================
# Sample metric
# ==============================================================

def projection_directions(dim: int, n_proj: int, seed: int) -> np.ndarray:
    rng = philox_generator(seed, STREAM_PROJECTIONS)
    theta = rng.standard_normal((n_proj, dim))
    return theta / np.linalg.norm(theta, axis=1)[:, None]


def sliced_w1(a, b, n_proj: int = 64, seed: int = 0,
              directions: Optional[np.ndarray] = None) -> float:
    """Mean over unit directions theta of W1(theta.A, theta.B).

    The one-dimensional distances are exact for empirical measures
    (scipy.stats.wasserstein_distance). Pass ``directions`` to reuse one
    projection set across calls.

    Raises:
        EmptySample: either sample has no points.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[0] == 0 or a.size == 0 or b.shape[0] == 0 or b.size == 0:
        raise EmptySample("sliced_w1 needs at least one point in each sample")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"samples live in different dimensions: {a.shape[1]} vs {b.shape[1]}")
    if directions is None:
        directions = projection_directions(a.shape[1], n_proj, seed)
    pa, pb = a @ directions.T, b @ directions.T
    return float(np.mean([wasserstein_distance(pa[:, j], pb[:, j])
                          for j in range(directions.shape[0])]))


# ==============================================================
# Boundary statistics
# ==============================================================

def mean_no_permeability(snapshot: EmpiricalSnapshot, dom: DomainGeometry,
                         delta: float) -> ShellEstimate:
    """Average normal velocity u.n(pi(x)) over particles within delta of the wall."""
    if not delta > 0:
        raise ValueError(f"shell width must be > 0, got {delta}")
    dist = np.atleast_1d(signed_distance(dom, snapshot.positions))
    shell = dist < delta
    count = int(shell.sum())
    if count == 0:
        logger.warning("no particles within %g of the boundary", delta)
        return ShellEstimate(delta, 0, math.nan, math.nan)
    normals = boundary_normals(dom, snapshot.positions[shell])
    un = np.einsum("ij,ij->i", snapshot.velocities[shell], normals)
    se = float(np.std(un, ddof=1) / math.sqrt(count)) if count > 1 else math.nan
    return ShellEstimate(delta, count, float(np.mean(un)), se)


def predicted_boundary_flux(dom: DomainGeometry, s0: float, sigma: float, horizon: float,
                            weight: str = "count") -> float:
    """Expected per-particle boundary sum under the uniform x centred-Gaussian law.

    The normal velocity at time s is N(0, s0^2 + sigma^2 s). With
    f = 1 ("count") the value is (|dD|/|D|) int_0^T sqrt(var/(2 pi)) ds; with
    f = u.n ("normal_speed") it is (|dD|/|D|) int_0^T var/2 ds.
    """
    ratio = surface_to_volume(dom)
    if horizon <= 0:
        return 0.0
    if weight == "count":
        if sigma == 0:
            return ratio * horizon * s0 / math.sqrt(2.0 * math.pi)
        v_end = s0 * s0 + sigma * sigma * horizon
        integral = 2.0 / (3.0 * sigma * sigma) * (v_end ** 1.5 - s0 ** 3)
        return ratio * integral / math.sqrt(2.0 * math.pi)
    if weight == "normal_speed":
        return ratio * 0.5 * (s0 * s0 * horizon + 0.5 * sigma * sigma * horizon * horizon)
    raise ValueError(f"Unknown flux weight '{weight}'. Available: count, normal_speed")


def _regime_velocity_std(cfg: SimConfig) -> float:
    """s0 of the uniform x N(0, s0^2 I) regime, or WrongRegime."""
    law = cfg.initial_law
    if not cfg.kernel.is_zero:
        raise WrongRegime(f"flux prediction needs b = 0, got kernel {cfg.kernel.describe()}")
    if cfg.domain.kind is DomainKind.HALFSPACE:
        raise WrongRegime("flux prediction needs a bounded domain (ball or interval)")
    if law.position != "uniform" or law.margin != 0:
        raise WrongRegime("flux prediction needs uniform initial positions with margin 0")
    if law.is_centered_gaussian:
        return float(law.std)
    if law.velocity == "point" and not np.any(np.asarray(law.velocity_point, dtype=float)):
        return 0.0
    raise WrongRegime("flux prediction needs centred Gaussian initial velocities")


def boundary_hit_rate(events: EventLog, cfg: SimConfig, horizon: Optional[float] = None,
                      weight: str = "count") -> HitRateEstimate:
    """Empirical per-particle boundary sum on [0, T] against its closed form.

    weight "count" counts reflections (f = 1); "normal_speed" sums u-.n.

    Raises:
        WrongRegime: cfg is not b = 0 with uniform x centred-Gaussian data on
            a ball or interval.
    """
    s0 = _regime_velocity_std(cfg)
    horizon = cfg.horizon if horizon is None else horizon
    n = cfg.n_particles
    c = events.columns
    keep = c["t"] <= horizon
    if weight == "count":
        per_particle = np.bincount(c["particle"][keep], minlength=n).astype(float)
    else:
        un = np.einsum("ij,ij->i", c["u_minus"][keep], c["normal"][keep])
        per_particle = np.bincount(c["particle"][keep], weights=un, minlength=n)
    predicted = predicted_boundary_flux(cfg.domain, s0, cfg.sigma, horizon, weight)
    empirical = float(np.mean(per_particle))
    se = float(np.std(per_particle, ddof=1) / math.sqrt(n)) if n > 1 else math.nan
    if se > 0:
        z = (empirical - predicted) / se
    else:
        z = 0.0 if empirical == predicted else math.copysign(math.inf, empirical - predicted)
    return HitRateEstimate(empirical, se, predicted, z, n, weight)


def boundary_flux_moment(events: EventLog, cfg: SimConfig,
                         horizon: Optional[float] = None) -> HitRateEstimate:
    """Per-particle sum of the incoming normal speed u-.n at reflections."""
    return boundary_hit_rate(events, cfg, horizon, weight="normal_speed")


# ==============================================================
# Density estimation
# ==============================================================

def silverman_bandwidth(points) -> np.ndarray:
    """Per-dimension Silverman rule 0.9 min(std, IQR/1.34) n^(-1/5)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = pts.shape[0]
    std = np.std(pts, axis=0, ddof=1) if n > 1 else np.zeros(pts.shape[1])
    q75, q25 = np.percentile(pts, [75, 25], axis=0)
    spread = np.minimum(std, (q75 - q25) / 1.34)
    spread = np.where(spread > 0, spread, np.where(std > 0, std, 1.0))
    return 0.9 * spread * n ** -0.2


class GaussianKde:
    """Product-Gaussian kernel density estimate on phase space."""

    def __init__(self, points, bandwidth=None):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[0] == 0:
            raise EmptySample("kernel density estimate of an empty sample")
        dim = self.points.shape[1]
        h = silverman_bandwidth(self.points) if bandwidth is None else bandwidth
        self.bandwidth = np.broadcast_to(np.asarray(h, dtype=float), (dim,)).copy()
        if np.any(self.bandwidth <= 0):
            raise ValueError(f"bandwidth must be > 0, got {self.bandwidth.tolist()}")
        self._norm = 1.0 / (self.points.shape[0] * (2.0 * math.pi) ** (0.5 * dim)
                            * float(np.prod(self.bandwidth)))

    @property
    def peak(self) -> float:
        """Value at a lone point mass: ((2 pi)^(D/2) prod h)^-1."""
        return self._norm * self.points.shape[0]

    def __call__(self, queries) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=float)) / self.bandwidth
        p = self.points / self.bandwidth
        out = np.empty(q.shape[0])
        rows = max(1, PAIR_BLOCK // p.shape[0])
        for start in range(0, q.shape[0], rows):
            diff = q[start:start + rows, None, :] - p[None, :, :]
            out[start:start + rows] = np.exp(-0.5 * np.sum(diff * diff, axis=2)).sum(axis=1)
        return out * self._norm


def kde_density(points, bandwidth=None) -> GaussianKde:
    return GaussianKde(points, bandwidth)


@dataclass
class PhaseSpaceGrid:
    """Cell-centred grid on D x [-vmax, vmax]^d, restricted to D."""

    nodes: np.ndarray
    cell_volume: float

    @classmethod
    def build(cls, dom: DomainGeometry, vmax: float, points_per_axis: int,
              max_nodes: int = 1_000_000) -> "PhaseSpaceGrid":
        d = dom.dim
        if points_per_axis ** (2 * d) > max_nodes:
            raise ValueError(
                f"{points_per_axis}^{2 * d} grid nodes exceed the limit of {max_nodes}")
        if dom.kind is DomainKind.BALL:
            lo, hi = dom.center_array - dom.radius, dom.center_array + dom.radius
        elif dom.kind is DomainKind.INTERVAL:
            lo, hi = np.zeros(1), np.full(1, dom.length)
        else:
            raise ValueError("phase-space grids need a bounded domain")
        axes, widths = [], []
        for a, b in list(zip(lo, hi)) + [(-vmax, vmax)] * d:
            w = (b - a) / points_per_axis
            axes.append(a + w * (np.arange(points_per_axis) + 0.5))
            widths.append(w)
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 2 * d)
        inside = np.atleast_1d(signed_distance(dom, mesh[:, :d])) >= 0
        return cls(mesh[inside], float(np.prod(widths)))

    def l1(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(np.abs(f - g)) * self.cell_volume)

    def weighted_l2(self, f: np.ndarray, g: np.ndarray, weight: WeightFunction) -> float:
        d = self.nodes.shape[1] // 2
        omega = weight(self.nodes[:, d:])
        return float(math.sqrt(np.sum((f - g) ** 2 * omega) * self.cell_volume))


# ==============================================================
# Studies
# ==============================================================

def study_seeds(base: int, count: int) -> List[int]:
    return [base + i for i in range(count)]


@dataclass
class EpsilonStudy:
    rows: List[Dict[str, float]]
    medians: Dict[float, float]

    @property
    def trend_holds(self) -> bool:
        return non_increasing([self.medians[e] for e in sorted(self.medians, reverse=True)])


def _velocity_extent(cfg: SimConfig) -> float:
    law = cfg.initial_law
    s0 = float(law.std) if law.velocity == "gaussian" else 0.0
    centre = np.max(np.abs(law.mean_vector(cfg.dim))) if law.velocity == "gaussian" \
        else np.max(np.abs(np.asarray(law.velocity_point, dtype=float)))
    return float(centre + 5.0 * math.sqrt(s0 * s0 + cfg.sigma ** 2 * cfg.horizon))


def epsilon_convergence_study(base: SimConfig, eps_grid: Sequence[float], eps_ref: float,
                              seeds: Sequence[int], points_per_axis: int = 30,
                              bandwidth=None, alpha: Optional[float] = None,
                              workers: int = 1) -> EpsilonStudy:
    """Distances between the time-T KDE densities at each eps and at eps_ref.

    Every eps is run with the same seeds as the reference, so initial data
    and Brownian increments are shared across the grid.
    """
    eps_grid = [float(e) for e in eps_grid]
    if any(b >= a for a, b in zip(eps_grid, eps_grid[1:])):
        raise ValueError(f"epsilon grid must be strictly decreasing, got {eps_grid}")
    grid = PhaseSpaceGrid.build(base.domain, _velocity_extent(base), points_per_axis)
    weight = WeightFunction(alpha if alpha is not None else base.dim + 4.0, base.dim)
    rows = []
    for seed in seeds:
        ref_cfg = base.replace(epsilon=eps_ref, seed=seed, record_events=False, checkpoints=())
        reference = kde_density(phase_space_points(run(ref_cfg, workers).final), bandwidth)
        f_ref = reference(grid.nodes)
        for eps in eps_grid:
            if eps == eps_ref:
                f = f_ref
            else:
                cfg = ref_cfg.replace(epsilon=eps)
                f = kde_density(phase_space_points(run(cfg, workers).final), bandwidth)(grid.nodes)
            rows.append({"epsilon": eps, "seed": seed, "l1": grid.l1(f, f_ref),
                         "weighted_l2": grid.weighted_l2(f, f_ref, weight)})
            logger.info("epsilon study: eps=%g seed=%d L1=%.4g", eps, seed, rows[-1]["l1"])
    medians = {eps: float(np.median([r["l1"] for r in rows if r["epsilon"] == eps]))
               for eps in eps_grid}
    return EpsilonStudy(rows, medians)


@dataclass
class EnvelopeReport:
    """Outcome of the Maxwellian envelope monitor (status is always "monitor")."""

    time: float
    reference_std: float
    a: float
    nu: float
    upper_holds: bool
    lower_holds: bool
    fitted_a: float
    fitted_nu: float
    fitted_holds: bool
    max_z_above: float
    max_z_below: float
    bins_used: int
    status: str = "monitor"


def _envelope_counts(edges: np.ndarray, mean: float, std: float, a: float, nu: float,
                     t: float, n: int) -> np.ndarray:
    """n * exp(a t) * int_bin g^nu, g = N(mean, std^2) density."""
    scale = (2.0 * math.pi * std * std) ** (0.5 * (1.0 - nu)) / math.sqrt(nu)
    mass = np.diff(norm.cdf(edges, loc=mean, scale=std / math.sqrt(nu)))
    return n * math.exp(a * t) * scale * mass


def maxwellian_envelope_check(velocities, t: float, sigma: float, p0_mean: float = 0.0,
                              p0_std: float = 1.0, a: float = 0.0, nu: float = 1.0,
                              bins: int = 40, min_count: int = 50,
                              z_tol: float = 4.0) -> EnvelopeReport:
    """Compare one velocity coordinate's histogram with exp(a t) (G_sigma(t) * P0)^nu.

    The reference G_sigma(t) * P0 is N(p0_mean, p0_std^2 + sigma^2 t). Bin
    residuals are Poisson z-scores of the observed counts against the
    envelope's expected counts; only bins with at least ``min_count``
    samples are used, empty bins never are. (a, nu) are also fitted by
    weighted least squares of log-density against log-reference.
    """
    v = np.asarray(velocities, dtype=float)
    v = v[:, 0] if v.ndim == 2 else v
    n = v.size
    ref_std = math.sqrt(p0_std ** 2 + sigma ** 2 * t)
    lo = min(np.quantile(v, 0.001), p0_mean - 6.0 * ref_std)
    hi = max(np.quantile(v, 0.999), p0_mean + 6.0 * ref_std)
    counts, edges = np.histogram(v, bins=bins, range=(lo, hi))
    used = counts >= min_count

    def residuals(a_, nu_):
        expected = _envelope_counts(edges, p0_mean, ref_std, a_, nu_, t, n)
        return (counts - expected) / np.sqrt(np.maximum(expected, 1.0))

    z = residuals(a, nu)[used]
    max_above = float(z.max()) if z.size else 0.0
    max_below = float(z.min()) if z.size else 0.0

    fitted_a, fitted_nu, fitted_ok = math.nan, math.nan, False
    if used.sum() >= 2:
        centres = 0.5 * (edges[1:] + edges[:-1])
        width = edges[1] - edges[0]
        x = norm.logpdf(centres[used], loc=p0_mean, scale=ref_std)
        y = np.log(counts[used] / (n * width))
        fitted_nu, intercept = np.polyfit(x, y, 1, w=np.sqrt(counts[used]))
        fitted_a = intercept / t if t > 0 else 0.0
        if fitted_nu > 0:
            zf = residuals(fitted_a, fitted_nu)[used]
            fitted_ok = bool(np.all(np.abs(zf) <= z_tol))
    return EnvelopeReport(
        time=t, reference_std=ref_std, a=a, nu=nu,
        upper_holds=max_above <= z_tol, lower_holds=max_below >= -z_tol,
        fitted_a=float(fitted_a), fitted_nu=float(fitted_nu), fitted_holds=fitted_ok,
        max_z_above=max_above, max_z_below=max_below, bins_used=int(used.sum()))


# ==============================================================
# Chaoticity
# ==============================================================

FUNCTIONALS: Dict[str, Callable[[SystemState], np.ndarray]] = {
    "tanh_u1":   lambda s: np.tanh(s.u[:, 0]),
    "min_jumps": lambda s: np.minimum(s.jumps, 5).astype(float),
}


def pair_covariance(values) -> Tuple[float, float]:
    """Covariance of f over disjoint pairs (0,1), (2,3), ... and its SE.

    Values are shifted by the first one, so a constant f gives exactly 0.
    """
    f = np.asarray(values, dtype=float)
    m = f.size // 2
    if m == 0:
        raise EmptySample("pair covariance needs at least two particles")
    g = f - f[0]
    left, right = g[0:2 * m:2], g[1:2 * m:2]
    prod = left * right
    cov = float(np.mean(prod) - np.mean(left) * np.mean(right))
    se = float(np.std(prod, ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return cov, se


@dataclass
class ChaosRow:
    n_particles: int
    seeds: int
    median_abs_cov: float
    mean_cov: float
    pooled_se: float

    @property
    def consistent_with_zero(self) -> bool:
        return abs(self.mean_cov) <= 3.0 * self.pooled_se


def chaoticity_probe(finals: Dict[int, List[SystemState]],
                     functional: str = "tanh_u1") -> List[ChaosRow]:
    """Pair covariance of f(particle state) per N, summarized over seeds."""
    if functional not in FUNCTIONALS:
        raise ValueError(
            f"Unknown functional '{functional}'. Available: {', '.join(sorted(FUNCTIONALS))}")
    f = FUNCTIONALS[functional]
    rows = []
    for n in sorted(finals):
        covs, ses = zip(*(pair_covariance(f(state)) for state in finals[n]))
        covs, ses = np.asarray(covs), np.asarray(ses)
        rows.append(ChaosRow(n, len(covs), float(np.median(np.abs(covs))), float(np.mean(covs)),
                             float(math.sqrt(np.sum(ses ** 2)) / len(ses))))
    return rows


def chaos_study(base: SimConfig, n_grid: Sequence[int], seeds: Sequence[int],
                functional: str = "tanh_u1", workers: int = 1) -> List[ChaosRow]:
    finals: Dict[int, List[SystemState]] = {}
    for n in n_grid:
        for seed in seeds:
            cfg = base.replace(n_particles=int(n), seed=seed, record_events=False, checkpoints=())
            finals.setdefault(int(n), []).append(run(cfg, workers).final)
        logger.info("chaos study: N=%d done (%d seeds)", n, len(seeds))
    return chaoticity_probe(finals, functional)


def non_increasing(values: Sequence[float]) -> bool:
    return all(b <= a for a, b in zip(values, values[1:]))


# ==============================================================
# Drift consistency
# ==============================================================

@dataclass
class ConsistencyStudy:
    rows: List[Dict[str, float]] = field(default_factory=list)
    medians: List[Tuple[int, float, float]] = field(default_factory=list)

    @property
    def decreasing(self) -> bool:
        values = [m for _, _, m in self.medians]
        return all(b < a for a, b in zip(values, values[1:]))


def drift_consistency_study(dom: DomainGeometry, law: InitialLawSpec, kernel: VelocityKernel,
                            schedule: Sequence[Tuple[int, float]], seeds: Sequence[int],
                            queries, workers: int = 1) -> ConsistencyStudy:
    """Error of the mollified drift of an i.i.d. sample against exact_drift.

    For each (N, eps) of the schedule and each seed an i.i.d. snapshot of
    ``law`` is drawn; the error is the largest Euclidean deviation over the
    query points.
    """
    density = law.as_density(dom)
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    exact = np.array([exact_drift(x, density, kernel) for x in q])
    study = ConsistencyStudy()
    for n, eps in schedule:
        errors = []
        for seed in seeds:
            state = sample_initial(law, dom, int(n), seed)
            snap = snapshot_of(state)
            est = binned_smoothed_drift(q, snap, MollifierSpec(eps, dom.dim), kernel, dom,
                                        workers=workers)
            err = float(np.max(np.linalg.norm(est - exact, axis=1)))
            errors.append(err)
            study.rows.append({"n_particles": int(n), "epsilon": float(eps),
                               "seed": seed, "error": err})
        study.medians.append((int(n), float(eps), float(np.median(errors))))
        logger.info("drift consistency: N=%d eps=%g median error %.4g",
                    n, eps, study.medians[-1][2])
    return study
