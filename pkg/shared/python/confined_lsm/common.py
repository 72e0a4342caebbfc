"""
Common constants and helpers for the confined particle engine.

Provides tolerances, quadrature thresholds, random-stream tags and the small
helpers shared by the simulator, the diagnostics and the half-space oracle.
"""

import math
from typing import Dict, Tuple

import numpy as np

# ==============================================================
# Tolerances
# ==============================================================

TOL_BOUNDARY_REL = 1e-9      # boundary band, relative to the domain scale
UNIT_NORMAL_TOL = 1e-12      # |n| - 1 accepted by specular_reflect
STEP_SLACK = 1e-9            # slack when turning times into step indices
MAX_REFLECTIONS_PER_STEP = 64

# ==============================================================
# Quadrature
# ==============================================================

EXP_UNDERFLOW = 745.0        # exp(-745) underflows to 0.0 in double precision
GAMMA_TAIL = 1e-16           # truncation level of sinh/cosh^k gamma integrands
GAUSS_NODES = 64             # Gauss-Hermite / Gauss-Legendre nodes per axis
QUAD_LIMIT = 400             # subinterval limit handed to scipy.integrate.quad

# ==============================================================
# Random streams
# ==============================================================

# Philox keys are (stream << 64) | seed, so every purpose gets its own
# stream for a given master seed.
STREAM_INITIAL = 1
STREAM_BROWNIAN = 2
STREAM_PROJECTIONS = 3
STREAM_PASSAGE = 4

SEED_MASK = (1 << 64) - 1

# ==============================================================
# Presets
# ==============================================================

KERNEL_PRESETS: Dict[str, str] = {
    "zero":           "b(u) = 0",
    "neg_tanh":       "b_j(u) = -tanh(u_j)",
    "clipped_linear": "b_j(u) = clamp(u_j, -c, c)",
}

DOMAIN_KINDS: Dict[str, str] = {
    "ball":      "{|x - center| < R}",
    "halfspace": "{x_1 > 0}",
    "interval":  "(0, L), d = 1",
}

# ==============================================================
# Reference values
# ==============================================================

# (d/R) * int_0^T sqrt((s0^2 + sigma^2 s) / (2 pi)) ds at d=2, R=1, s0=sigma=T=1
HIT_RATE_BALL_2D = 2.0 / math.sqrt(2.0 * math.pi) * (2.0 / 3.0) * (2.0 ** 1.5 - 1.0)
K0_AT_ONE = 0.42102443824070834

# C(1, 1) from two quadrature routes (trapezoid in x after t = 1 - x^2 on the
# swapped single integral, nested Simpson on the double integral) agreeing to
# 1e-12; the inner and outer integrals collapse to
# (128 sqrt(3)/pi^4) int_0^1 t^(-3/2) sqrt(1 - t) exp(-3/(2 t^3)) dt
BOUND_CONSTANT_T1_B1 = 0.0245739668980777


# ==============================================================
# Helpers
# ==============================================================

def philox_generator(seed: int, stream: int, counter: int = 0) -> np.random.Generator:
    """Return a Generator on the Philox stream ``stream`` of ``seed``.

    ``counter`` selects a disjoint window of the stream: window ``c`` starts
    at Philox counter ``c << 64``, so up to 2**64 blocks can be drawn from it
    before it touches the next window.
    """
    key = (int(stream) << 64) | (int(seed) & SEED_MASK)
    return np.random.Generator(np.random.Philox(key=key, counter=int(counter) << 64))


def step_count(horizon: float, dt: float) -> int:
    """Number of steps needed to reach ``horizon``: ceil(T/dt)."""
    return max(0, int(math.ceil(horizon / dt - STEP_SLACK)))


def checkpoint_step(t: float, dt: float) -> int:
    """Step index of checkpoint time ``t``, rounded down to a step boundary."""
    return max(0, int(math.floor(t / dt + STEP_SLACK)))


def as_points(x, dim: int) -> Tuple[np.ndarray, bool]:
    """Coerce ``x`` to a float array of shape (n, dim).

    Returns the array and whether the input was a single point, so callers
    can hand scalars back for scalar input.
    """
    arr = np.asarray(x, dtype=float)
    single = arr.ndim <= 1
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.shape[0] == dim else arr.reshape(-1, 1)
        single = arr.shape[0] == 1
    if arr.shape[-1] != dim:
        raise ValueError(f"expected points of dimension {dim}, got shape {np.shape(x)}")
    return arr, single
