"""
Exact invariants of a recorded run, as issue-list checks.

Provides checks that apply to any run made with record_events:
1. Speed preservation at every reflection
2. Flux sign and normal-component flip at every reflection
3. Containment of every stored state
4. k reconstruction from the event log (bitwise)
5. Jump counts against the event log
6. Pathwise velocity identity u(T) = u(0) + sum B dt + sum sigma dW + k(T)

Also provides:
- run_all_checks() -- (category, issues, is_error) tuples, non-empty checks only
- Verdict -- outcome record of one experiment
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geometry import signed_distance
from .simulator import RunRecord, pathwise_identity_check

# ==============================================================
# Configuration
# ==============================================================

SPEED_TOL = 1e-12
FLUX_TOL = 1e-12
CONTAINMENT_TOL = 1e-9
IDENTITY_TOL = 1e-10
MAX_LISTED = 10  # issues listed per check before summarizing the rest

STATUSES = ("pass", "fail", "monitor")


def _capped(issues: List[str], total: int) -> List[str]:
    if total > len(issues):
        issues.append(f"  ... and {total - len(issues)} more")
    return issues


# ==============================================================
# Checks
# ==============================================================

def check_speed_preservation(record: RunRecord, tol: float = SPEED_TOL) -> List[str]:
    """||u+| - |u-|| <= tol for every event."""
    c = record.events.columns
    diff = np.abs(np.linalg.norm(c["u_plus"], axis=1) - np.linalg.norm(c["u_minus"], axis=1))
    bad = np.flatnonzero(diff > tol)
    issues = [f"  particle {c['particle'][i]} at t={c['t'][i]!r}: "
              f"speed changed by {diff[i]:.3e}" for i in bad[:MAX_LISTED]]
    return _capped(issues, bad.size)


def check_flux_sign(record: RunRecord, tol: float = FLUX_TOL) -> List[str]:
    """u-.n >= -tol, u+.n <= tol and u+.n = -(u-.n) within tol."""
    c = record.events.columns
    un_minus = np.einsum("ij,ij->i", c["u_minus"], c["normal"])
    un_plus = np.einsum("ij,ij->i", c["u_plus"], c["normal"])
    bad = np.flatnonzero((un_minus < -tol) | (un_plus > tol) | (np.abs(un_plus + un_minus) > tol))
    issues = [f"  particle {c['particle'][i]} at t={c['t'][i]!r}: "
              f"u-.n={un_minus[i]!r}, u+.n={un_plus[i]!r}" for i in bad[:MAX_LISTED]]
    return _capped(issues, bad.size)


def check_containment(record: RunRecord, tol: float = CONTAINMENT_TOL) -> List[str]:
    """Every stored state lies inside the closed domain (within tol)."""
    dom = record.config.domain
    issues = []
    states = [("initial", record.initial), ("final", record.final)]
    states += [(f"t={t!r}", s) for t, s in sorted(record.checkpoints.items())]
    for label, state in states:
        dist = np.atleast_1d(signed_distance(dom, state.x))
        outside = np.flatnonzero(dist < -tol)
        if outside.size:
            i = outside[0]
            issues.append(f"  {label}: {outside.size} particle(s) outside, "
                          f"worst id {i} at distance {dist[i]!r}")
    return issues


def check_k_decomposition(record: RunRecord) -> List[str]:
    """k(T) equals the event-log sum of -2(u-.n)n, bit for bit."""
    rebuilt = record.events.reconstruct_k(record.final.size)
    bad = np.flatnonzero(np.any(rebuilt != record.final.k, axis=1))
    issues = [f"  particle {i}: k={record.final.k[i].tolist()} but log gives "
              f"{rebuilt[i].tolist()}" for i in bad[:MAX_LISTED]]
    return _capped(issues, bad.size)


def check_jump_counts(record: RunRecord) -> List[str]:
    """Per-particle jump counters match the number of logged events."""
    logged = record.events.hits_per_particle(record.final.size)
    bad = np.flatnonzero(logged != record.final.jumps)
    issues = [f"  particle {i}: jumps={record.final.jumps[i]} but {logged[i]} events logged"
              for i in bad[:MAX_LISTED]]
    return _capped(issues, bad.size)


def check_pathwise_identity(record: RunRecord, tol: float = IDENTITY_TOL) -> List[str]:
    residual = pathwise_identity_check(record)
    if residual > tol:
        return [f"  max residual {residual:.3e} exceeds {tol:.1e}"]
    return []


def run_all_checks(record: RunRecord) -> List[Tuple[str, List[str], bool]]:
    """Run all six run-level checks.

    Returns list of (category_name, issues_list, is_error) tuples.
    Only non-empty checks are included. Checks that need the event log are
    skipped for runs made without record_events.
    """
    results = []

    contained = check_containment(record)
    if contained:
        results.append(("Containment", contained, True))

    if record.events is None:
        return results

    speed = check_speed_preservation(record)
    if speed:
        results.append(("Speed Preservation", speed, True))

    flux = check_flux_sign(record)
    if flux:
        results.append(("Flux Sign", flux, True))

    k_dec = check_k_decomposition(record)
    if k_dec:
        results.append(("k Reconstruction", k_dec, True))

    counts = check_jump_counts(record)
    if counts:
        results.append(("Jump Counts", counts, True))

    identity = check_pathwise_identity(record)
    if identity:
        results.append(("Pathwise Identity", identity, True))

    return results


# ==============================================================
# Verdicts
# ==============================================================

@dataclass
class Verdict:
    """Outcome of one experiment: pass, fail or monitor (never gates)."""

    name: str
    status: str
    statistics: Dict[str, object] = field(default_factory=dict)
    tolerances: Dict[str, object] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    wall_time: float = 0.0
    issues: List[str] = field(default_factory=list)

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"Unknown verdict status '{self.status}'. Available: {', '.join(STATUSES)}")

    @classmethod
    def decide(cls, name: str, checks: Dict[str, bool], **kwargs) -> "Verdict":
        """pass iff every named check holds; failing names go to issues."""
        failed = [f"  {label}" for label, ok in checks.items() if not ok]
        issues = kwargs.pop("issues", []) + failed
        return cls(name, "fail" if failed else "pass", issues=issues, **kwargs)

    @property
    def failed(self) -> bool:
        return self.status == "fail"

    def to_dict(self) -> dict:
        return {"name": self.name, "status": self.status, "statistics": self.statistics,
                "tolerances": self.tolerances, "seeds": self.seeds,
                "wall_time": self.wall_time, "issues": self.issues}
