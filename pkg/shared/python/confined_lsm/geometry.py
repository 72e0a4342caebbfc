"""
Confining domains and the ballistic/reflection geometry on them.

Provides:
- DomainGeometry -- Ball, HalfSpace ({x_1 > 0}) and Interval (0, L)
- signed_distance(), nearest_boundary_point(), outward_normal()
- first_exit_time() and the vectorised exit_times() used by the simulator
- specular_reflect() and reflection_jump() (the velocity jump -2(u.n)n)
- volume(), surface_area(), surface_to_volume(), sample_uniform()

Every function accepts either one point of shape (d,) or a batch of shape
(n, d) and answers in kind.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy.special import gammaln

from .common import TOL_BOUNDARY_REL, UNIT_NORMAL_TOL, as_points
from .errors import InfeasibleMargin, NotOnBoundary, StartsOutside, UnsupportedLaw

logger = logging.getLogger(__name__)


class DomainKind(str, Enum):
    BALL = "ball"
    HALFSPACE = "halfspace"
    INTERVAL = "interval"


@dataclass(frozen=True)
class DomainGeometry:
    """A confining domain D.

    Use the ``ball``/``halfspace``/``interval`` constructors rather than the
    raw fields. ``radius`` is only meaningful for balls, ``length`` only for
    intervals.
    """

    kind: DomainKind
    dim: int
    radius: float = 1.0
    length: float = 1.0
    center: Tuple[float, ...] = field(default=())

    def __post_init__(self):
        kind = DomainKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.dim < 1:
            raise ValueError(f"dimension must be >= 1, got {self.dim}")
        if kind is DomainKind.BALL:
            if not self.radius > 0:
                raise ValueError(f"ball radius must be > 0, got {self.radius}")
            center = tuple(float(c) for c in self.center) or (0.0,) * self.dim
            if len(center) != self.dim:
                raise ValueError(
                    f"ball center has {len(center)} coordinates, dimension is {self.dim}")
            object.__setattr__(self, "center", center)
        elif kind is DomainKind.INTERVAL:
            if self.dim != 1:
                raise ValueError(f"interval domains are one-dimensional, got dim={self.dim}")
            if not self.length > 0:
                raise ValueError(f"interval length must be > 0, got {self.length}")

    @classmethod
    def ball(cls, radius: float = 1.0, dim: int = 2, center=None) -> "DomainGeometry":
        return cls(DomainKind.BALL, dim, radius=float(radius),
                   center=tuple(center) if center is not None else ())

    @classmethod
    def halfspace(cls, dim: int = 1) -> "DomainGeometry":
        return cls(DomainKind.HALFSPACE, dim)

    @classmethod
    def interval(cls, length: float = 1.0) -> "DomainGeometry":
        return cls(DomainKind.INTERVAL, 1, length=float(length))

    @property
    def scale(self) -> float:
        """Length scale the boundary tolerance is relative to."""
        if self.kind is DomainKind.BALL:
            return self.radius
        if self.kind is DomainKind.INTERVAL:
            return self.length
        return 1.0

    @property
    def tol_boundary(self) -> float:
        return TOL_BOUNDARY_REL * self.scale

    @property
    def inradius(self) -> float:
        """Largest signed distance reached inside the domain."""
        if self.kind is DomainKind.BALL:
            return self.radius
        if self.kind is DomainKind.INTERVAL:
            return 0.5 * self.length
        return math.inf

    @property
    def center_array(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float)

    @property
    def satisfies_compact_c3(self) -> bool:
        """Compact C^3 boundary hypothesis: balls only.

        HalfSpace is unbounded and the Interval boundary is two points; both
        are admitted for comparison experiments without that claim.
        """
        return self.kind is DomainKind.BALL

    def describe(self) -> str:
        if self.kind is DomainKind.BALL:
            return f"Ball(center={self.center}, R={self.radius}, d={self.dim})"
        if self.kind is DomainKind.INTERVAL:
            return f"Interval(0, {self.length})"
        return f"HalfSpace(x_1 > 0, d={self.dim})"


# ==============================================================
# Distances and normals
# ==============================================================

def _scalar_or_array(values: np.ndarray, single: bool):
    return values[0] if single else values


def signed_distance(dom: DomainGeometry, x):
    """Signed distance to the boundary: positive inside, zero on the wall."""
    pts, single = as_points(x, dom.dim)
    if dom.kind is DomainKind.BALL:
        d = dom.radius - np.linalg.norm(pts - dom.center_array, axis=1)
    elif dom.kind is DomainKind.HALFSPACE:
        d = pts[:, 0].copy()
    else:
        d = np.minimum(pts[:, 0], dom.length - pts[:, 0])
    return float(d[0]) if single else d


def nearest_boundary_point(dom: DomainGeometry, x):
    """Projection of x on the boundary (radial for balls).

    The ball center has no unique projection; it is sent along e_1.
    """
    pts, single = as_points(x, dom.dim)
    if dom.kind is DomainKind.BALL:
        rel = pts - dom.center_array
        r = np.linalg.norm(rel, axis=1)
        direction = np.zeros_like(rel)
        direction[:, 0] = 1.0
        nz = r > 0
        direction[nz] = rel[nz] / r[nz, None]
        proj = dom.center_array + dom.radius * direction
    elif dom.kind is DomainKind.HALFSPACE:
        proj = pts.copy()
        proj[:, 0] = 0.0
    else:
        proj = np.where(pts < 0.5 * dom.length, 0.0, dom.length)
    return _scalar_or_array(proj, single)


def normals_at(dom: DomainGeometry, pts: np.ndarray) -> np.ndarray:
    """Outward normals for (n, d) points assumed to lie on the wall (unchecked)."""
    if dom.kind is DomainKind.BALL:
        rel = pts - dom.center_array
        return rel / np.linalg.norm(rel, axis=1)[:, None]
    if dom.kind is DomainKind.HALFSPACE:
        n = np.zeros_like(pts)
        n[:, 0] = -1.0
        return n
    return np.where(pts < 0.5 * dom.length, -1.0, 1.0)


def outward_normal(dom: DomainGeometry, x):
    """Outward unit normal at a boundary point.

    Raises:
        NotOnBoundary: if some point is farther than tol_boundary from the wall.
    """
    pts, single = as_points(x, dom.dim)
    dist = np.atleast_1d(signed_distance(dom, pts))
    off = np.abs(dist) > dom.tol_boundary
    if np.any(off):
        i = int(np.argmax(off))
        raise NotOnBoundary(
            f"point {pts[i].tolist()} is at signed distance {dist[i]!r} from "
            f"{dom.describe()} (tolerance {dom.tol_boundary!r})")
    return _scalar_or_array(normals_at(dom, pts), single)


def boundary_normals(dom: DomainGeometry, x) -> np.ndarray:
    """Outward normal at the nearest boundary point of each x (no precondition)."""
    pts, _ = as_points(x, dom.dim)
    return normals_at(dom, np.atleast_2d(nearest_boundary_point(dom, pts)))


# ==============================================================
# Exit times
# ==============================================================

def exit_times(dom: DomainGeometry, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Time until each straight ray x + s u leaves the domain (inf if never).

    x and u are (n, d) arrays. The exit root is clamped at 0, so a point
    sitting on (or rounding just past) the wall and moving outward gets 0.
    """
    if dom.kind is DomainKind.BALL:
        y = x - dom.center_array
        a = np.einsum("ij,ij->i", u, u)
        b = 2.0 * np.einsum("ij,ij->i", y, u)
        c = np.einsum("ij,ij->i", y, y) - dom.radius * dom.radius
        disc = np.sqrt(np.maximum(b * b - 4.0 * a * c, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            # larger root without cancellation: -2c/(b+sqrt) or (sqrt-b)/(2a)
            pos = b >= 0.0
            denom = b + disc
            s_pos = np.where(denom > 0.0, -2.0 * c / denom, 0.0)
            s_neg = (disc - b) / (2.0 * a)
            s = np.where(pos, s_pos, s_neg)
        s = np.where(a > 0.0, s, np.inf)
    elif dom.kind is DomainKind.HALFSPACE:
        u1 = u[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(u1 < 0.0, -x[:, 0] / u1, np.inf)
    else:
        u1 = u[:, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(u1 < 0.0, -x[:, 0] / u1,
                         np.where(u1 > 0.0, (dom.length - x[:, 0]) / u1, np.inf))
    return np.maximum(s, 0.0)


def hit_points(dom: DomainGeometry, x: np.ndarray, u: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Boundary points x + s u for rays known to hit at time s."""
    hit = x + s[:, None] * u
    if dom.kind is DomainKind.HALFSPACE:
        hit[:, 0] = 0.0
    elif dom.kind is DomainKind.INTERVAL:
        hit[:, 0] = np.where(u[:, 0] < 0.0, 0.0, dom.length)
    return hit


def first_exit_time(dom: DomainGeometry, x, u, h: float) -> Optional[Tuple[float, np.ndarray]]:
    """First boundary crossing of the segment x + s u, s in (0, h].

    Args:
        dom: confining domain
        x: starting point inside the closed domain
        u: constant velocity
        h: time budget, > 0

    Returns:
        (t*, hit point) or None if the segment stays interior. A point on the
        wall moving outward returns t* = 0.

    Raises:
        StartsOutside: if x lies more than tol_boundary outside the domain.
    """
    if not h > 0:
        raise ValueError(f"time budget must be > 0, got {h}")
    pts, _ = as_points(x, dom.dim)
    vel, _ = as_points(u, dom.dim)
    dist = float(np.atleast_1d(signed_distance(dom, pts))[0])
    if dist < -dom.tol_boundary:
        raise StartsOutside(
            f"start point {pts[0].tolist()} is outside {dom.describe()} (distance {dist!r})")
    s = exit_times(dom, pts, vel)
    if not s[0] <= h:
        return None
    hit = hit_points(dom, pts, vel, s)
    return float(s[0]), hit[0]


# ==============================================================
# Reflection
# ==============================================================

def specular_reflect(u, n):
    """Specular reflection u - 2(u.n)n."""
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    norms = np.linalg.norm(np.atleast_2d(n), axis=-1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORMAL_TOL):
        raise ValueError(f"reflection normal must be a unit vector, got |n|={norms.max()!r}")
    return u + reflection_jump(u, n)


def reflection_jump(u, n):
    """Velocity jump -2(u.n)n added by a specular reflection."""
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    un = np.sum(u * n, axis=-1, keepdims=True)
    return -2.0 * un * n


# ==============================================================
# Measures and sampling
# ==============================================================

def volume(dom: DomainGeometry) -> float:
    if dom.kind is DomainKind.BALL:
        d = dom.dim
        return math.exp(0.5 * d * math.log(math.pi) - gammaln(0.5 * d + 1.0)) * dom.radius ** d
    if dom.kind is DomainKind.INTERVAL:
        return dom.length
    return math.inf


def surface_area(dom: DomainGeometry) -> float:
    if dom.kind is DomainKind.BALL:
        return dom.dim * volume(dom) / dom.radius
    if dom.kind is DomainKind.INTERVAL:
        return 2.0
    return math.inf


def surface_to_volume(dom: DomainGeometry) -> float:
    """|dD| / |D|: d/R for balls, 2/L for intervals."""
    if dom.kind is DomainKind.HALFSPACE:
        raise ValueError("a half-space has no finite surface-to-volume ratio")
    if dom.kind is DomainKind.BALL:
        return dom.dim / dom.radius
    return 2.0 / dom.length


def sample_uniform(dom: DomainGeometry, rng: np.random.Generator, n: int,
                   margin: float = 0.0) -> np.ndarray:
    """Draw n points uniformly from {x : signed_distance(x) >= margin}.

    Raises:
        InfeasibleMargin: margin >= inradius (nothing, or a null set, is left).
        UnsupportedLaw: the domain is unbounded.
    """
    if dom.kind is DomainKind.HALFSPACE:
        raise UnsupportedLaw("no uniform law on an unbounded half-space; use a point mass")
    if margin < 0:
        raise InfeasibleMargin(f"interior margin must be >= 0, got {margin}")
    if margin >= dom.inradius:
        raise InfeasibleMargin(
            f"interior margin {margin} leaves no room in {dom.describe()} "
            f"(inradius {dom.inradius})")
    if dom.kind is DomainKind.INTERVAL:
        return rng.uniform(margin, dom.length - margin, size=(n, 1))
    direction = rng.standard_normal((n, dom.dim))
    direction /= np.linalg.norm(direction, axis=1)[:, None]
    radius = (dom.radius - margin) * rng.random(n) ** (1.0 / dom.dim)
    return dom.center_array + radius[:, None] * direction
