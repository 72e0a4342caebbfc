"""
Passage times of the free Langevin process at the wall {x = 0}.

The process is x_t = y + int_0^t u_s ds, u_t = v + B_t (unit diffusion).
This module evaluates the pieces of the bound P(tau_n <= T) <= C(T, beta*)/2^n
and checks it by Monte Carlo.

Provides:
- LachalParams
- bessel_K_imag() -- K_{i gamma}(a) from its integral representation
- theta_transform_integral(), gamma_weighted_bessel_integral() -- two routes
  to int_0^inf gamma K_{i gamma}(a) sinh(pi gamma/3)/cosh(pi gamma/3)^k d gamma
- lachal_g(), lachal_g_u_integral(), lachal_g_u_closed_form(), lachal_g_u_bound()
- bound_constant() -- C(T, beta*) by adaptive or tanh-sinh quadrature
- langevin_increments(), passage_counts(), mc_passage_probability()
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.integrate import quad

try:
    from scipy.integrate import tanhsinh
except ImportError:  # SciPy < 1.15 ships it privately
    from scipy.integrate._tanhsinh import _tanhsinh as tanhsinh

from .common import (
    EXP_UNDERFLOW, GAMMA_TAIL, QUAD_LIMIT, STREAM_PASSAGE, philox_generator, step_count,
)
from .errors import NonpositiveArgument, NonpositiveElapsed

logger = logging.getLogger(__name__)

BOUND_SCHEMES = ("adaptive", "tanh_sinh")
PATH_BLOCK = 10_000


@dataclass(frozen=True)
class LachalParams:
    """Start (y, v), horizon T, passage index n and support margin beta*."""

    y: float
    v: float
    horizon: float
    n: int
    beta_star: float

    def __post_init__(self):
        problems = []
        if not self.y > 0:
            problems.append(f"y must be > 0, got {self.y}")
        if not self.horizon > 0:
            problems.append(f"horizon must be > 0, got {self.horizon}")
        if self.n < 1:
            problems.append(f"passage index must be >= 1, got {self.n}")
        if not self.beta_star > 0:
            problems.append(f"beta* must be > 0, got {self.beta_star}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def bound_applies(self) -> bool:
        return self.y >= self.beta_star and self.n >= 3


# ==============================================================
# Bessel functions of imaginary order
# ==============================================================

def bessel_K_imag(gamma: float, a: float, epsabs: float = 1e-13) -> float:
    """K_{i gamma}(a) = int_0^inf exp(-a cosh t) cos(gamma t) dt.

    The integrand is written e^-a exp(-a (cosh t - 1)) and cut at t_max with
    a cosh(t_max) = 745, past which exp(-a cosh t) underflows.

    Raises:
        NonpositiveArgument: a <= 0.
    """
    if not a > 0:
        raise NonpositiveArgument(f"K_(i gamma)(a) needs a > 0, got {a}")
    if gamma < 0:
        raise ValueError(f"order gamma must be >= 0, got {gamma}")
    if a >= EXP_UNDERFLOW:
        return 0.0
    t_max = math.acosh(EXP_UNDERFLOW / a)
    scale = math.exp(-a)

    def f(t):
        return math.exp(-a * (math.cosh(t) - 1.0))

    tol = min(epsabs / scale, epsabs)
    if gamma == 0:
        val, _ = quad(f, 0.0, t_max, epsabs=tol, epsrel=1e-13, limit=QUAD_LIMIT)
    else:
        val, _ = quad(f, 0.0, t_max, weight="cos", wvar=gamma,
                      epsabs=tol, epsrel=1e-13, limit=QUAD_LIMIT)
    return scale * val


def gamma_cutoff(k: int) -> float:
    """gamma beyond which sinh(pi g/3)/cosh(pi g/3)^k < 1e-16."""
    return 3.0 / ((k - 1) * math.pi) * ((k - 1) * math.log(2.0) - math.log(GAMMA_TAIL))


def _gamma_weight(g, k: int):
    """sinh(x)/cosh(x)^k = tanh(x) sech(x)^(k-1), x = pi g / 3."""
    x = math.pi * g / 3.0
    return math.tanh(x) / math.cosh(x) ** (k - 1)


def _check_k_a(k: int, a: float):
    if not a > 0:
        raise NonpositiveArgument(f"argument must be > 0, got {a}")
    if k < 2:
        raise ValueError(f"exponent k must be >= 2, got {k}")


def theta_transform_integral(k: int, a: float) -> float:
    """int_0^inf gamma K_{i gamma}(a) sinh(pi g/3)/cosh(pi g/3)^k d gamma via
    gamma K_{i gamma}(a) = int_0^inf a sinh(th) e^{-a cosh th} sin(gamma th) d th.

    The inner gamma integral is a Fourier sine transform (QAWO rule), the
    outer theta integral is cut where a cosh(theta) > 745. The magnitude is
    at most (3/pi) e^-a / (k - 1).
    """
    _check_k_a(k, a)
    if a >= EXP_UNDERFLOW:
        return 0.0
    g_max = gamma_cutoff(k)
    th_max = math.acosh(EXP_UNDERFLOW / a)

    def sine_transform(theta):
        if theta == 0.0:
            return 0.0
        val, _ = quad(_gamma_weight, 0.0, g_max, args=(k,), weight="sin", wvar=theta,
                      epsabs=1e-14, epsrel=1e-12, limit=QUAD_LIMIT)
        return val

    def outer(theta):
        return a * math.sinh(theta) * math.exp(-a * (math.cosh(theta) - 1.0)) * sine_transform(theta)

    val, _ = quad(outer, 0.0, th_max, epsabs=1e-14, epsrel=1e-12, limit=QUAD_LIMIT)
    return math.exp(-a) * val


def gamma_weighted_bessel_integral(k: int, a: float) -> float:
    """Same quantity as theta_transform_integral, integrating in gamma directly."""
    _check_k_a(k, a)
    if a >= EXP_UNDERFLOW:
        return 0.0

    def f(g):
        return g * bessel_K_imag(g, a) * _gamma_weight(g, k)

    val, _ = quad(f, 0.0, gamma_cutoff(k), epsabs=1e-14, epsrel=1e-12, limit=QUAD_LIMIT)
    return val


def theta_transform_bound(k: int, a: float) -> float:
    """(3/pi) e^-a, valid for every k >= 2."""
    _check_k_a(k, a)
    return 3.0 / math.pi * math.exp(-a)


# ==============================================================
# Transition density at the wall
# ==============================================================

def _check_elapsed(dt_: float):
    if not dt_ > 0:
        raise NonpositiveElapsed(f"elapsed time must be > 0, got {dt_}")


def lachal_g(dt_: float, y: float, v: float, u):
    """Density g(dt, y, v; 0, u) of reaching the wall with speed u after dt.

        g = 2 sqrt(3)/(pi dt^2) exp(-6y^2/dt^3 - 6yv/dt^2 - 2(u^2+v^2)/dt)
            * cosh((2u/dt^2)(3y + dt v))

    Evaluated in log space; the exponent is clamped at 709.
    """
    _check_elapsed(dt_)
    u = np.asarray(u, dtype=float)
    arg = (2.0 * u / dt_ ** 2) * (3.0 * y + dt_ * v)
    log_cosh = np.logaddexp(arg, -arg) - math.log(2.0)
    log_g = (math.log(2.0 * math.sqrt(3.0) / (math.pi * dt_ ** 2))
             - 6.0 * y * y / dt_ ** 3 - 6.0 * y * v / dt_ ** 2
             - 2.0 * (u * u + v * v) / dt_ + log_cosh)
    out = np.exp(np.minimum(log_g, 709.0))
    return float(out) if out.ndim == 0 else out


def lachal_g_u_closed_form(dt_: float, y: float, v: float) -> float:
    """int_0^inf g du = sqrt(3)/sqrt(2 pi dt^3) exp(-3 (y + dt v)^2 / (2 dt^3))."""
    _check_elapsed(dt_)
    return math.sqrt(3.0 / (2.0 * math.pi * dt_ ** 3)) * math.exp(
        -3.0 * (y + dt_ * v) ** 2 / (2.0 * dt_ ** 3))


def lachal_g_u_bound(dt_: float, y: float) -> float:
    """sqrt(3)/(2 sqrt(2 pi dt^3)) exp(-3 y^2/(2 dt^3)).

    For v >= 0 the u-integral of g is at most twice this value, with equality
    at v = 0.
    """
    _check_elapsed(dt_)
    return math.sqrt(3.0) / (2.0 * math.sqrt(2.0 * math.pi * dt_ ** 3)) * math.exp(
        -3.0 * y * y / (2.0 * dt_ ** 3))


def lachal_g_u_integral(dt_: float, y: float, v: float) -> float:
    """int_0^inf g(dt, y, v; 0, u) du by adaptive quadrature.

    In u the integrand is a sum of two Gaussians of width sqrt(dt/4); the
    range is cut 40 widths past the larger centre.
    """
    _check_elapsed(dt_)
    centre = abs(3.0 * y + dt_ * v) / (2.0 * dt_)
    width = math.sqrt(dt_ / 4.0)
    upper = centre + 40.0 * width
    points = [centre] if 0.0 < centre < upper else None
    val, _ = quad(lambda u: lachal_g(dt_, y, v, u), 0.0, upper, points=points,
                  epsabs=0.0, epsrel=1e-12, limit=QUAD_LIMIT)
    return val


# ==============================================================
# Bound constant
# ==============================================================

def _first_passage_kernel(t, beta: float):
    """sqrt(3)/(pi t^(3/2)) exp(-3 beta^2 / (2 t^3)), 0 at t = 0."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        log_val = -1.5 * np.log(t) - 1.5 * beta * beta / t ** 3
        out = np.where(t > 0, math.sqrt(3.0) / math.pi * np.exp(log_val), 0.0)
    return float(out) if out.ndim == 0 else out


def bound_constant(horizon: float, beta_star: float, scheme: str = "adaptive") -> float:
    """C(T, beta*) = (2^6/pi^3) int_0^T s^(-1/2) I(T - s) ds,
    I(tau) = int_0^tau sqrt(3)/(pi t^(3/2)) exp(-3 beta*^2/(2 t^3)) dt.

    The outer integral is taken in w = sqrt(s). ``scheme`` selects
    Gauss-Kronrod (scipy.integrate.quad) or tanh-sinh
    (scipy.integrate.tanhsinh) for both levels.
    """
    if not horizon > 0 or not beta_star > 0:
        raise ValueError(f"need T > 0 and beta* > 0, got T={horizon}, beta*={beta_star}")
    prefactor = 64.0 / math.pi ** 3
    root = math.sqrt(horizon)

    if scheme == "adaptive":
        def inner(tau):
            if tau <= 0:
                return 0.0
            val, _ = quad(_first_passage_kernel, 0.0, tau, args=(beta_star,),
                          epsabs=1e-16, epsrel=1e-12, limit=QUAD_LIMIT)
            return val

        outer, _ = quad(lambda w: 2.0 * inner(horizon - w * w), 0.0, root,
                        epsabs=1e-16, epsrel=1e-11, limit=QUAD_LIMIT)
        return prefactor * outer

    if scheme == "tanh_sinh":
        def inner_batch(w):
            tau = np.maximum(horizon - np.asarray(w, dtype=float) ** 2, 0.0)
            res = tanhsinh(_first_passage_kernel, 0.0, tau, args=(beta_star,),
                           atol=1e-18, rtol=1e-12)
            return 2.0 * np.asarray(res.integral)

        res = tanhsinh(inner_batch, 0.0, root, atol=1e-18, rtol=1e-11)
        return prefactor * float(res.integral)

    raise ValueError(f"Unknown quadrature scheme '{scheme}'. Available: {', '.join(BOUND_SCHEMES)}")


# ==============================================================
# Monte Carlo passage counts
# ==============================================================

def langevin_increments(rng: np.random.Generator, h: float, size: int):
    """Exact (dx, du) of the free Langevin process over time h, beyond x += u h.

    Covariance [[h^3/3, h^2/2], [h^2/2, h]].
    """
    z = rng.standard_normal((2, size))
    du = math.sqrt(h) * z[0]
    dx = h ** 1.5 * (0.5 * z[0] + z[1] / (2.0 * math.sqrt(3.0)))
    return dx, du


@dataclass
class PassageCounts:
    """Per-path wall crossings on [0, T] and the interpolated first crossing time."""

    crossings: np.ndarray
    first_time: np.ndarray
    dt: float

    @property
    def paths(self) -> int:
        return self.crossings.size

    def tail(self, n: int):
        """(P(at least n crossings), binomial SE)."""
        p = float(np.mean(self.crossings >= n))
        return p, math.sqrt(p * (1.0 - p) / self.paths)


def _passage_block(y: float, v: float, horizon: float, dt: float, size: int,
                   seed: int, block: int):
    rng = philox_generator(seed, STREAM_PASSAGE, counter=block)
    x = np.full(size, float(y))
    u = np.full(size, float(v))
    crossings = np.zeros(size, dtype=np.int64)
    first = np.full(size, np.nan)
    n_steps = step_count(horizon, dt)
    t = 0.0
    for s in range(n_steps):
        h = min(dt, horizon - s * dt)
        dx, du = langevin_increments(rng, h, size)
        x_new = x + u * h + dx
        crossed = (x > 0.0) != (x_new > 0.0)
        fresh = crossed & np.isnan(first)
        if np.any(fresh):
            first[fresh] = t + h * x[fresh] / (x[fresh] - x_new[fresh])
        crossings += crossed
        x = x_new
        u = u + du
        t += h
    return crossings, first


def passage_counts(y: float, v: float, horizon: float, dt: float, paths: int,
                   seed: int, workers: int = 1) -> PassageCounts:
    """Simulate ``paths`` free Langevin paths and count sign changes of x.

    Crossings are detected by a sign change between grid points, so two
    crossings inside one step are missed: the counts are biased low.
    Paths are simulated in blocks of PATH_BLOCK, block b drawing from Philox
    window b of the (seed, passage) stream.
    """
    if not dt > 0 or not horizon > 0:
        raise ValueError(f"need dt > 0 and T > 0, got dt={dt}, T={horizon}")
    sizes = [min(PATH_BLOCK, paths - start) for start in range(0, paths, PATH_BLOCK)]
    jobs = [(y, v, horizon, dt, size, seed, b) for b, size in enumerate(sizes)]
    if workers <= 1 or len(jobs) == 1:
        parts = [_passage_block(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda job: _passage_block(*job), jobs))
    crossings = np.concatenate([p[0] for p in parts])
    first = np.concatenate([p[1] for p in parts])
    logger.info("passage MC: %d paths, dt=%g, max crossings %d", paths, dt, int(crossings.max()))
    return PassageCounts(crossings, first, dt)


@dataclass
class PassageEstimate:
    n: int
    estimate: float
    std_error: float


def mc_passage_probability(y: float, v: float, horizon: float, n: int, dt: float,
                           paths: int, seed: int, workers: int = 1) -> PassageEstimate:
    """Monte Carlo P(tau_n <= T), a lower-biased estimate (see passage_counts)."""
    p, se = passage_counts(y, v, horizon, dt, paths, seed, workers).tail(n)
    return PassageEstimate(n, p, se)


def passage_table(counts: PassageCounts, constant: float, n_values: Sequence[int]) -> List[dict]:
    """Rows n -> estimate, SE, bound C/2^n and whether estimate <= bound + 3 SE."""
    rows = []
    for n in n_values:
        p, se = counts.tail(n)
        bound = constant / 2.0 ** n
        rows.append({"n": int(n), "estimate": p, "std_error": se, "bound": bound,
                     "pass": bool(p <= bound + 3.0 * se)})
    return rows
