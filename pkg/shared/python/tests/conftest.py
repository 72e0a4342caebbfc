import textwrap

import numpy as np
import pytest

from confined_lsm.geometry import DomainGeometry
from confined_lsm.simulator import InitialLawSpec, SimConfig


@pytest.fixture
def unit_disc():
    return DomainGeometry.ball(1.0, 2)


@pytest.fixture
def invariant_config(unit_disc):
    """b = 0, sigma = 1, uniform x N(0, I) in the unit disc."""
    return SimConfig(n_particles=2000, domain=unit_disc, epsilon=0.2, dt=1e-2, horizon=0.5,
                     sigma=1.0, initial_law=InitialLawSpec(std=1.0), seed=3)


@pytest.fixture
def write_toml(tmp_path):
    def write(text: str, name: str = "experiment.toml") -> str:
        path = tmp_path / name
        path.write_text(textwrap.dedent(text))
        return str(path)
    return write


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
