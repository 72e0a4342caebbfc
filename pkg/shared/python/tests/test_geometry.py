import math

import numpy as np
import pytest

from confined_lsm.errors import InfeasibleMargin, NotOnBoundary, StartsOutside, UnsupportedLaw
from confined_lsm.geometry import (
    DomainGeometry, exit_times, first_exit_time, nearest_boundary_point, outward_normal,
    reflection_jump, sample_uniform, signed_distance, specular_reflect, surface_area,
    surface_to_volume, volume,
)


BALL = DomainGeometry.ball(1.0, 2)
HALF = DomainGeometry.halfspace(2)
INTERVAL = DomainGeometry.interval(2.0)


# --------------------------------------------------------------
# Signed distance and normals
# --------------------------------------------------------------

@pytest.mark.parametrize("dom, x, expected", [
    (BALL, (0.5, 0.0), 0.5),
    (HALF, (2.0, -7.0), 2.0),
    (BALL, (1.0, 0.0), 0.0),
    (INTERVAL, 0.5, 0.5),
    (INTERVAL, 1.5, 0.5),
    (BALL, (0.0, 2.0), -1.0),
])
def test_signed_distance(dom, x, expected):
    assert signed_distance(dom, x) == pytest.approx(expected, abs=1e-15)


def test_signed_distance_vectorised():
    pts = np.array([[0.0, 0.0], [0.6, 0.8], [0.3, 0.4]])
    assert np.allclose(signed_distance(BALL, pts), [1.0, 0.0, 0.5])


def test_outward_normal_examples():
    assert np.allclose(outward_normal(BALL, (0.0, 1.0)), (0.0, 1.0))
    assert np.allclose(outward_normal(HALF, (0.0, 3.0)), (-1.0, 0.0))
    assert np.allclose(outward_normal(INTERVAL, 0.0), (-1.0,))
    assert np.allclose(outward_normal(INTERVAL, 2.0), (1.0,))


def test_outward_normal_off_boundary_raises():
    with pytest.raises(NotOnBoundary):
        outward_normal(BALL, (0.5, 0.0))


def test_outward_normal_is_unit(rng):
    theta = rng.uniform(0, 2 * math.pi, 200)
    pts = np.column_stack([np.cos(theta), np.sin(theta)])
    normals = outward_normal(BALL, pts)
    assert np.all(np.abs(np.linalg.norm(normals, axis=1) - 1.0) <= 1e-14)


def test_nearest_boundary_point_is_radial():
    assert np.allclose(nearest_boundary_point(BALL, (0.3, 0.4)), (0.6, 0.8))
    assert np.allclose(nearest_boundary_point(HALF, (5.0, 2.0)), (0.0, 2.0))


# --------------------------------------------------------------
# Exit times
# --------------------------------------------------------------

def test_first_exit_halfspace_line():
    dom = DomainGeometry.halfspace(1)
    t, hit = first_exit_time(dom, 0.5, -1.0, 1.0)
    assert t == pytest.approx(0.5)
    assert hit[0] == 0.0


def test_first_exit_ball_center():
    t, hit = first_exit_time(BALL, (0.0, 0.0), (2.0, 0.0), 1.0)
    assert t == 0.5
    assert np.array_equal(hit, [1.0, 0.0])


def test_first_exit_stays_inside():
    assert first_exit_time(BALL, (0.0, 0.0), (0.1, 0.0), 1.0) is None


def test_first_exit_starts_outside():
    with pytest.raises(StartsOutside):
        first_exit_time(BALL, (1.5, 0.0), (1.0, 0.0), 1.0)


def test_first_exit_on_wall_moving_out():
    t, hit = first_exit_time(BALL, (1.0, 0.0), (1.0, 0.0), 0.1)
    assert t == 0.0
    assert np.allclose(hit, (1.0, 0.0))


def test_hit_point_on_boundary(rng):
    x = sample_uniform(BALL, rng, 500)
    u = rng.standard_normal((500, 2))
    s = exit_times(BALL, x, u)
    hit = x + s[:, None] * u
    assert np.all(np.abs(signed_distance(BALL, hit)) <= 1e-10)


def test_exit_time_near_wall_inward_is_stable():
    # starting just inside the wall and moving inward: the far exit, not ~0
    x = np.array([[1.0 - 1e-12, 0.0]])
    u = np.array([[-1.0, 0.0]])
    assert exit_times(BALL, x, u)[0] == pytest.approx(2.0 - 1e-12, abs=1e-12)


def test_exit_time_zero_velocity_is_infinite():
    assert exit_times(BALL, np.zeros((1, 2)), np.zeros((1, 2)))[0] == math.inf
    assert exit_times(INTERVAL, np.ones((1, 1)), np.zeros((1, 1)))[0] == math.inf


def test_interval_hit_points_are_exact():
    t, hit = first_exit_time(INTERVAL, 0.3, 0.7, 10.0)
    assert hit[0] == 2.0
    assert t == pytest.approx(1.7 / 0.7)


# --------------------------------------------------------------
# Reflection
# --------------------------------------------------------------

@pytest.mark.parametrize("u, n, expected", [
    ((3.0, -4.0), (0.0, -1.0), (3.0, 4.0)),
    ((1.0, 2.0), (1.0, 0.0), (-1.0, 2.0)),
    ((0.0, 5.0), (1.0, 0.0), (0.0, 5.0)),
])
def test_specular_reflect_examples(u, n, expected):
    assert np.array_equal(specular_reflect(u, n), expected)


def test_specular_reflect_properties(rng):
    u = 5.0 * rng.standard_normal((1000, 3))
    n = rng.standard_normal((1000, 3))
    n /= np.linalg.norm(n, axis=1)[:, None]
    r = specular_reflect(u, n)
    assert np.allclose(np.linalg.norm(r, axis=1), np.linalg.norm(u, axis=1), rtol=0, atol=1e-12)
    assert np.allclose(specular_reflect(r, n), u, rtol=0, atol=1e-12)
    assert np.allclose(np.sum(r * n, axis=1), -np.sum(u * n, axis=1), rtol=0, atol=1e-12)


def test_specular_reflect_rejects_non_unit_normal():
    with pytest.raises(ValueError):
        specular_reflect((1.0, 0.0), (2.0, 0.0))


def test_reflection_jump_is_reflect_minus_u():
    u, n = np.array([0.3, -1.2]), np.array([0.6, -0.8])
    assert np.allclose(u + reflection_jump(u, n), specular_reflect(u, n))


# --------------------------------------------------------------
# Measures and sampling
# --------------------------------------------------------------

def test_volume_and_surface():
    assert volume(BALL) == pytest.approx(math.pi)
    assert surface_area(BALL) == pytest.approx(2 * math.pi)
    assert volume(DomainGeometry.ball(2.0, 3)) == pytest.approx(4 / 3 * math.pi * 8)
    assert surface_to_volume(BALL) == 2.0
    assert surface_to_volume(INTERVAL) == 1.0
    with pytest.raises(ValueError):
        surface_to_volume(HALF)


def test_compact_c3_flag():
    assert BALL.satisfies_compact_c3
    assert not HALF.satisfies_compact_c3
    assert not INTERVAL.satisfies_compact_c3


def test_sample_uniform_respects_margin(rng):
    x = sample_uniform(BALL, rng, 10_000, margin=0.5)
    assert np.all(np.linalg.norm(x, axis=1) <= 0.5)
    assert np.all(np.abs(x.mean(axis=0)) <= 3 / math.sqrt(10_000))


def test_sample_uniform_radial_law(rng):
    x = sample_uniform(BALL, rng, 20_000)
    r = np.linalg.norm(x, axis=1)
    # P(r <= 1/sqrt(2)) = 1/2 in the disc
    assert np.mean(r <= 1 / math.sqrt(2)) == pytest.approx(0.5, abs=0.015)


def test_sample_uniform_infeasible_margin(rng):
    with pytest.raises(InfeasibleMargin):
        sample_uniform(BALL, rng, 10, margin=1.0)
    with pytest.raises(InfeasibleMargin):
        sample_uniform(INTERVAL, rng, 10, margin=1.0)


def test_sample_uniform_halfspace_unsupported(rng):
    with pytest.raises(UnsupportedLaw):
        sample_uniform(HALF, rng, 10)


def test_domain_validation():
    with pytest.raises(ValueError):
        DomainGeometry.ball(0.0, 2)
    with pytest.raises(ValueError):
        DomainGeometry.interval(-1.0)
    with pytest.raises(ValueError):
        DomainGeometry.ball(1.0, 2, center=(0.0, 0.0, 0.0))
