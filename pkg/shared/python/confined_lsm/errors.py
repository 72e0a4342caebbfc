"""
Exception types raised by the confined_lsm library.

Input problems derive from ValueError, failures discovered while a
computation is running derive from RuntimeError. The CLI maps each family
to its own exit code (see cli.EXIT_CODES).
"""

from typing import List, Optional, Tuple


class LsmError(Exception):
    """Root of every error raised on purpose by confined_lsm."""


# ==============================================================
# Geometry
# ==============================================================

class NotOnBoundary(LsmError, ValueError):
    """A point handed to outward_normal is farther than tol_boundary from the wall."""


class StartsOutside(LsmError, ValueError):
    """A trajectory or snapshot starts outside the closed domain."""


# ==============================================================
# Laws and drift
# ==============================================================

class InfeasibleMargin(LsmError, ValueError):
    """The interior margin beta* leaves no room inside the domain."""


class UnsupportedLaw(LsmError, ValueError):
    """An initial law cannot be sampled on the requested domain."""


class UnsupportedDensity(LsmError, ValueError):
    """exact_drift only integrates product densities it knows in closed form."""


# ==============================================================
# Simulation
# ==============================================================

class ReflectionCapExceeded(LsmError, RuntimeError):
    """A particle reflected more often in one step than the configured cap."""

    def __init__(self, particle_id: int, time: float, cap: int):
        self.particle_id = particle_id
        self.time = time
        self.cap = cap
        super().__init__(
            f"particle {particle_id} exceeded {cap} reflections in the step "
            f"starting at t={time!r}; reduce dt")


class MissingIncrements(LsmError, RuntimeError):
    """A run record does not carry the drift/noise ledgers."""


# ==============================================================
# Diagnostics and oracle
# ==============================================================

class WrongRegime(LsmError, ValueError):
    """A diagnostic with a closed-form prediction was fed a run outside its regime."""


class EmptySample(LsmError, ValueError):
    """A sample metric received an empty sample."""


class NonpositiveArgument(LsmError, ValueError):
    """A special function was evaluated at a non-positive argument."""


class NonpositiveElapsed(LsmError, ValueError):
    """A transition density was evaluated at a non-positive elapsed time."""


# ==============================================================
# Configuration
# ==============================================================

class ConfigParseError(LsmError, ValueError):
    """The experiment file is not valid TOML."""

    def __init__(self, path: str, message: str,
                 line: Optional[int] = None, column: Optional[int] = None):
        self.path = path
        self.line = line
        self.column = column
        where = f"{path}"
        if line is not None:
            where += f":{line}"
            if column is not None:
                where += f":{column}"
        super().__init__(f"{where}: {message}")


class ConfigValidationError(LsmError, ValueError):
    """One or more fields of an experiment file violate their constraints.

    ``problems`` holds every ``(field, constraint)`` pair found, not just the
    first one.
    """

    def __init__(self, problems: List[Tuple[str, str]]):
        self.problems = list(problems)
        lines = [f"  {field}: {constraint}" for field, constraint in self.problems]
        super().__init__(
            f"{len(self.problems)} configuration error(s):\n" + "\n".join(lines))
