import numpy as np
import pytest

from confined_lsm.drift import VelocityKernel
from confined_lsm.simulator import InitialLawSpec, SimConfig, run
from confined_lsm.verify import (
    Verdict, check_containment, check_flux_sign, check_jump_counts, check_k_decomposition,
    check_speed_preservation, run_all_checks,
)


@pytest.fixture
def record(unit_disc):
    cfg = SimConfig(n_particles=300, domain=unit_disc, epsilon=0.3, dt=0.01, horizon=0.3,
                    sigma=1.0, kernel=VelocityKernel("neg_tanh"),
                    initial_law=InitialLawSpec(std=2.0), seed=8, checkpoints=(0.1, 0.2))
    return run(cfg)


def test_clean_run_has_no_issues(record):
    assert len(record.events) > 0
    assert run_all_checks(record) == []


def test_run_without_events_checks_containment_only(invariant_config):
    record = run(invariant_config.replace(record_events=False))
    assert run_all_checks(record) == []
    record.final.x[0] = [3.0, 0.0]
    results = run_all_checks(record)
    assert [name for name, _, _ in results] == ["Containment"]


def test_corrupted_event_is_reported(record):
    record.events.columns["u_plus"][0] *= 2.0
    assert check_speed_preservation(record)
    assert check_flux_sign(record)
    names = {name for name, _, _ in run_all_checks(record)}
    assert {"Speed Preservation", "Flux Sign"} <= names


def test_corrupted_k_is_reported(record):
    record.final.k[5, 0] += 1e-9
    issues = check_k_decomposition(record)
    assert len(issues) == 1
    assert issues[0].startswith("  particle 5:")
    names = {name for name, _, _ in run_all_checks(record)}
    assert "k Reconstruction" in names and "Pathwise Identity" not in names


def test_jump_counter_mismatch(record):
    record.final.jumps[0] += 1
    assert check_jump_counts(record)


def test_checkpoint_outside_is_reported(record):
    record.checkpoints[0.2].x[:3] = [[0.0, 1.5]] * 3
    issues = check_containment(record)
    assert len(issues) == 1
    assert "t=0.2" in issues[0] and "3 particle(s)" in issues[0]


def test_issue_lists_are_capped(record):
    record.final.k[:] += 1.0
    issues = check_k_decomposition(record)
    assert len(issues) == 11
    assert issues[-1] == f"  ... and {300 - 10} more"


def test_verdict_decide():
    ok = Verdict.decide("demo", {"a": True, "b": True}, seeds=[1])
    assert ok.status == "pass" and not ok.failed and ok.issues == []
    bad = Verdict.decide("demo", {"a": True, "b": False}, issues=["  note"])
    assert bad.failed
    assert bad.issues == ["  note", "  b"]
    assert bad.to_dict()["status"] == "fail"


def test_verdict_status_is_validated():
    with pytest.raises(ValueError):
        Verdict("demo", "maybe")
    assert not Verdict("demo", "monitor").failed
