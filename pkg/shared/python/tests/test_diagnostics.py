import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from confined_lsm.common import HIT_RATE_BALL_2D
from confined_lsm.diagnostics import (
    GaussianKde, PhaseSpaceGrid, WeightFunction, boundary_flux_moment, boundary_hit_rate,
    chaos_study, chaoticity_probe, drift_consistency_study, epsilon_convergence_study,
    kde_density, maxwellian_envelope_check, mean_no_permeability, non_increasing,
    pair_covariance, predicted_boundary_flux, silverman_bandwidth, sliced_w1, snapshot_of,
)
from confined_lsm.drift import EmpiricalSnapshot, VelocityKernel
from confined_lsm.errors import EmptySample, WrongRegime
from confined_lsm.geometry import DomainGeometry
from confined_lsm.simulator import EventLog, InitialLawSpec, SimConfig, run

NEG_TANH = VelocityKernel("neg_tanh")
INTERVAL = DomainGeometry.interval(1.0)


# --------------------------------------------------------------
# sliced_w1
# --------------------------------------------------------------

def test_sliced_w1_identical_samples(rng):
    a = rng.standard_normal((200, 4))
    assert sliced_w1(a, a.copy()) == 0.0


def test_sliced_w1_singletons():
    assert sliced_w1([[0.0]], [[1.0]]) == pytest.approx(1.0)
    assert sliced_w1([[0.0, 0.0]], [[0.0, 0.0]]) == 0.0


def test_sliced_w1_shift_in_plane(rng):
    a = rng.standard_normal((500, 2))
    # mean |theta_1| over the circle is 2/pi
    assert sliced_w1(a, a + [1.0, 0.0], n_proj=2000) == pytest.approx(2 / math.pi, abs=0.03)


def test_sliced_w1_unit_shift_along_first_axis(rng):
    a = rng.standard_normal((100_000, 1))
    b = 1.0 + rng.standard_normal((100_000, 1))
    assert sliced_w1(a, b, directions=np.array([[1.0]])) == pytest.approx(1.0, abs=0.02)
    # in phase space the shift sits on the first coordinate only
    pa = np.hstack([a, rng.standard_normal((100_000, 1))])
    pb = np.hstack([b, rng.standard_normal((100_000, 1))])
    assert sliced_w1(pa, pb, directions=np.array([[1.0, 0.0]])) == pytest.approx(1.0, abs=0.02)


def test_sliced_w1_is_a_metric_on_samples(rng):
    a, b, c = (rng.standard_normal((100, 3)) + shift for shift in (0.0, 0.5, 1.5))
    ab, ba = sliced_w1(a, b, seed=2), sliced_w1(b, a, seed=2)
    assert ab == pytest.approx(ba, rel=1e-12)
    assert sliced_w1(a, c, seed=2) <= ab + sliced_w1(b, c, seed=2) + 1e-12


def test_sliced_w1_errors():
    with pytest.raises(EmptySample):
        sliced_w1(np.zeros((0, 2)), [[0.0, 0.0]])
    with pytest.raises(ValueError):
        sliced_w1([[0.0, 0.0]], [[0.0, 0.0, 0.0]])


# --------------------------------------------------------------
# Boundary statistics
# --------------------------------------------------------------

def test_no_permeability_outward_velocities(unit_disc):
    angles = np.linspace(0.0, 2 * math.pi, 50, endpoint=False)
    ring = 0.99 * np.column_stack([np.cos(angles), np.sin(angles)])
    estimate = mean_no_permeability(EmpiricalSnapshot.freeze(ring, ring / 0.99), unit_disc, 0.05)
    assert estimate.count == 50
    assert estimate.estimate == pytest.approx(1.0)


def test_no_permeability_empty_shell(unit_disc):
    pts = np.zeros((10, 2))
    estimate = mean_no_permeability(EmpiricalSnapshot.freeze(pts, pts), unit_disc, 0.05)
    assert not estimate.defined
    assert not estimate.within(100.0)


def test_no_permeability_under_invariance(invariant_config):
    record = run(invariant_config)
    estimate = mean_no_permeability(snapshot_of(record.final), invariant_config.domain, 0.1)
    assert estimate.count > 100
    assert estimate.within(4.0)


def test_predicted_flux_unit_disc(unit_disc):
    assert predicted_boundary_flux(unit_disc, 1.0, 1.0, 1.0) == pytest.approx(HIT_RATE_BALL_2D)
    assert HIT_RATE_BALL_2D == pytest.approx(0.9726, abs=1e-4)
    assert predicted_boundary_flux(unit_disc, 1.0, 1.0, 1.0, "normal_speed") == pytest.approx(1.5)
    assert predicted_boundary_flux(unit_disc, 1.0, 1.0, 0.0) == 0.0


def test_predicted_flux_zero_noise_limit(unit_disc):
    still = predicted_boundary_flux(unit_disc, 1.0, 0.0, 1.0)
    assert still == pytest.approx(2.0 / math.sqrt(2 * math.pi))
    assert predicted_boundary_flux(unit_disc, 1.0, 1e-4, 1.0) == pytest.approx(still, rel=1e-6)


def test_predicted_flux_unknown_weight(unit_disc):
    with pytest.raises(ValueError):
        predicted_boundary_flux(unit_disc, 1.0, 1.0, 1.0, "speed")


def test_hit_rate_matches_prediction(invariant_config):
    record = run(invariant_config)
    rate = boundary_hit_rate(record.events, invariant_config)
    assert rate.predicted == pytest.approx(
        predicted_boundary_flux(invariant_config.domain, 1.0, 1.0, 0.5))
    assert abs(rate.z) <= 4.0
    moment = boundary_flux_moment(record.events, invariant_config)
    assert moment.weight == "normal_speed"
    assert moment.empirical > 0


def test_hit_rate_wrong_regime(invariant_config):
    log = EventLog(2)
    with pytest.raises(WrongRegime):
        boundary_hit_rate(log, invariant_config.replace(kernel=NEG_TANH))
    with pytest.raises(WrongRegime):
        boundary_hit_rate(log, invariant_config.replace(
            initial_law=InitialLawSpec(margin=0.1)))
    with pytest.raises(WrongRegime):
        boundary_hit_rate(log, invariant_config.replace(
            initial_law=InitialLawSpec(mean=(1.0, 0.0))))


# --------------------------------------------------------------
# Density estimation
# --------------------------------------------------------------

def test_kde_recovers_standard_normal_at_zero(rng):
    kde = kde_density(rng.standard_normal((100_000, 1)), bandwidth=0.1)
    assert kde([[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi), abs=0.02)


def test_kde_single_point():
    kde = kde_density([[0.0]], bandwidth=1.0)
    assert kde([[0.0]])[0] == pytest.approx(1 / math.sqrt(2 * math.pi))
    assert kde.peak == pytest.approx(1 / math.sqrt(2 * math.pi))
    left, right = kde([[-1.0], [1.0]])
    assert left == pytest.approx(right)


def test_kde_integrates_to_one(rng):
    pts = rng.standard_normal((300, 1))
    kde = GaussianKde(pts)
    grid = np.linspace(-8, 8, 4001)[:, None]
    assert trapezoid(kde(grid), grid[:, 0]) == pytest.approx(1.0, abs=1e-6)


def test_kde_errors():
    with pytest.raises(EmptySample):
        GaussianKde(np.zeros((0, 2)))
    with pytest.raises(ValueError):
        GaussianKde([[0.0, 1.0]], bandwidth=[1.0, 0.0])


def test_silverman_bandwidth(rng):
    h = silverman_bandwidth(rng.standard_normal((1000, 2)))
    assert np.all(h == pytest.approx(0.9 * 1000 ** -0.2, rel=0.15))
    assert silverman_bandwidth(np.ones((32, 1)))[0] == pytest.approx(0.9 * 32 ** -0.2)


def test_phase_space_grid():
    grid = PhaseSpaceGrid.build(INTERVAL, 1.0, 10)
    assert grid.nodes.shape == (100, 2)
    assert grid.cell_volume == pytest.approx(0.02)
    f = np.ones(100)
    assert grid.l1(f, f) == 0.0
    assert grid.l1(f, np.zeros(100)) == pytest.approx(2.0)


def test_phase_space_grid_limits(unit_disc):
    disc = PhaseSpaceGrid.build(unit_disc, 1.0, 10)
    assert 0 < disc.nodes.shape[0] < 10 ** 4
    with pytest.raises(ValueError):
        PhaseSpaceGrid.build(unit_disc, 1.0, 40)
    with pytest.raises(ValueError):
        PhaseSpaceGrid.build(DomainGeometry.halfspace(1), 1.0, 10)


def test_weight_function():
    with pytest.raises(ValueError):
        WeightFunction(4.0, 1)
    omega = WeightFunction(6.0, 2)
    assert omega([0.0, 0.0]) == 1.0
    assert omega([1.0, 1.0]) == pytest.approx(27.0)


# --------------------------------------------------------------
# Envelope monitor
# --------------------------------------------------------------

def test_envelope_holds_for_heat_solution(rng):
    v = rng.normal(0.0, math.sqrt(2.0), size=100_000)
    report = maxwellian_envelope_check(v, t=1.0, sigma=1.0)
    assert report.status == "monitor"
    assert report.upper_holds and report.lower_holds
    assert report.fitted_nu == pytest.approx(1.0, abs=0.1)


def test_envelope_flags_heavy_tails(rng):
    v = rng.standard_cauchy(100_000)
    report = maxwellian_envelope_check(v, t=1.0, sigma=1.0)
    assert not report.upper_holds
    assert report.max_z_above > 4.0


# --------------------------------------------------------------
# Chaoticity
# --------------------------------------------------------------

def test_pair_covariance_of_constant():
    assert pair_covariance(np.full(10, 3.7)) == (0.0, 0.0)


def test_pair_covariance_independent(rng):
    cov, se = pair_covariance(rng.standard_normal(20_000))
    assert abs(cov) <= 5 * se


def test_pair_covariance_needs_a_pair():
    with pytest.raises(EmptySample):
        pair_covariance([1.0])


def test_chaoticity_probe_unknown_functional(invariant_config):
    state = run(invariant_config.replace(n_particles=10, horizon=0.1)).final
    with pytest.raises(ValueError):
        chaoticity_probe({10: [state]}, "energy")


def test_chaos_study_without_interaction(invariant_config):
    base = invariant_config.replace(horizon=0.1)
    rows = chaos_study(base, [100, 400], seeds=[1, 2, 3])
    assert [r.n_particles for r in rows] == [100, 400]
    assert all(r.seeds == 3 for r in rows)
    for r in rows:
        assert abs(r.mean_cov) <= 5 * r.pooled_se


def test_chaos_study_with_interaction_decays_in_n(unit_disc):
    base = SimConfig(n_particles=16, domain=unit_disc, epsilon=0.3, dt=0.02, horizon=0.1,
                     sigma=1.0, kernel=NEG_TANH, initial_law=InitialLawSpec(std=1.0))
    rows = chaos_study(base, [16, 256, 4096], seeds=list(range(1, 8)))
    assert [r.n_particles for r in rows] == [16, 256, 4096]
    assert non_increasing([r.median_abs_cov for r in rows])
    assert rows[-1].median_abs_cov < rows[0].median_abs_cov


def test_non_increasing():
    assert non_increasing([3, 2, 2, 1])
    assert not non_increasing([1, 2])
    assert non_increasing([])


# --------------------------------------------------------------
# Convergence studies
# --------------------------------------------------------------

def _interval_config(**kw):
    law = InitialLawSpec(mean=0.5, std=1.0)
    return SimConfig(n_particles=kw.pop("n_particles", 200), domain=INTERVAL, epsilon=0.2,
                     dt=0.01, horizon=0.05, sigma=1.0, kernel=kw.pop("kernel", NEG_TANH), initial_law=law, **kw)


def test_epsilon_study_reference_row_is_zero():
    study = epsilon_convergence_study(_interval_config(), [0.4, 0.2, 0.1], 0.1, seeds=[1, 2],
                                      points_per_axis=20)
    assert len(study.rows) == 6
    assert all(r["l1"] == 0.0 for r in study.rows if r["epsilon"] == 0.1)
    assert all(r["l1"] >= 0.0 and r["weighted_l2"] >= 0.0 for r in study.rows)
    assert set(study.medians) == {0.4, 0.2, 0.1}


def test_epsilon_study_without_interaction_is_flat():
    cfg = _interval_config(kernel=VelocityKernel())
    study = epsilon_convergence_study(cfg, [0.4, 0.2], 0.1, seeds=[1], points_per_axis=20)
    assert all(r["l1"] == 0.0 for r in study.rows)
    assert study.trend_holds


def test_epsilon_study_with_interaction_shrinks_toward_reference():
    cfg = _interval_config(n_particles=4000).replace(horizon=0.2)
    grid = [0.4, 0.2, 0.1]
    study = epsilon_convergence_study(cfg, grid, 0.05, seeds=[1, 2, 3], points_per_axis=20)
    assert non_increasing([study.medians[eps] for eps in grid])
    assert study.medians[0.1] < study.medians[0.4]
    assert study.trend_holds


def test_epsilon_grid_must_decrease():
    with pytest.raises(ValueError):
        epsilon_convergence_study(_interval_config(), [0.1, 0.2], 0.05, seeds=[1])


def test_drift_consistency_improves_with_sample_size():
    law = InitialLawSpec(mean=0.5, std=1.0)
    study = drift_consistency_study(INTERVAL, law, NEG_TANH, [(100, 0.3), (20_000, 0.1)],
                                    seeds=[1, 2, 3], queries=[[0.5], [0.3]])
    assert len(study.rows) == 6
    assert study.decreasing


@pytest.mark.slow
def test_hit_rate_acceptance(unit_disc):
    cfg = SimConfig(n_particles=20_000, domain=unit_disc, epsilon=0.2, dt=1e-3, horizon=1.0,
                    sigma=1.0, initial_law=InitialLawSpec(std=1.0), seed=11)
    rate = boundary_hit_rate(run(cfg).events, cfg)
    assert rate.predicted == pytest.approx(HIT_RATE_BALL_2D)
    assert abs(rate.z) <= 4.0
