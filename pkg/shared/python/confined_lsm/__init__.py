"""
Monte Carlo engine and verification tools for confined Lagrangian
stochastic models.

This package simulates N-particle systems with a mollified empirical drift
and specular reflection at the wall, and checks their output against exact
invariants, closed-form boundary statistics and a half-line passage bound.
"""

__version__ = "0.1.0"

from .errors import (
    LsmError, NotOnBoundary, StartsOutside, InfeasibleMargin, UnsupportedLaw,
    UnsupportedDensity, ReflectionCapExceeded, MissingIncrements, WrongRegime,
    EmptySample, NonpositiveArgument, NonpositiveElapsed, ConfigParseError,
    ConfigValidationError,
)
from .geometry import (
    DomainGeometry, DomainKind, signed_distance, outward_normal, first_exit_time,
    specular_reflect, reflection_jump, sample_uniform, surface_to_volume,
)
from .drift import (
    MollifierSpec, VelocityKernel, EmpiricalSnapshot, ProductDensity,
    exact_drift, smoothed_drift, binned_smoothed_drift,
)
from .simulator import (
    InitialLawSpec, SimConfig, SystemState, EventLog, RunRecord,
    sample_initial, step, run, pathwise_identity_check,
)
from .diagnostics import (
    sliced_w1, mean_no_permeability, boundary_hit_rate, kde_density,
    maxwellian_envelope_check, chaoticity_probe,
)
from .halfspace_oracle import (
    LachalParams, bessel_K_imag, theta_transform_integral, lachal_g,
    bound_constant, mc_passage_probability,
)
from .verify import Verdict, run_all_checks
from .config import ExperimentConfig, parse_config
