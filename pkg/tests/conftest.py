import numpy as np
import pytest

from alloyfreeze.field_core import BoundaryData, Grid, State, streamfunction_velocity
from alloyfreeze.phase_model import PhaseDiagram, PhysicalParams


def random_solenoidal(grid, rng, scale=1.0):
    """Divergence-free face velocity of size O(scale) with zero wall flux."""
    psi = rng.standard_normal((grid.nx + 1, grid.ny + 1)) * scale * min(grid.dx, grid.dy)
    return streamfunction_velocity(psi, grid)


def random_state(grid, rng, cbar=0.1, c_amp=0.05, th_amp=0.1, v_scale=0.0):
    c = cbar + c_amp * rng.uniform(-1, 1, (grid.nx, grid.ny))
    c += cbar - c.mean()
    th = th_amp * rng.uniform(-1, 1, (grid.nx, grid.ny))
    vel = random_solenoidal(grid, rng, v_scale) if v_scale else grid.zeros_vector()
    return State(c, th, vel, grid.zeros_cell(), 0.0)


@pytest.fixture
def pd():
    return PhaseDiagram(theta_F=1.0, theta_E=0.0, c_E=0.5, c_A=0.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_grid():
    return Grid(12, 12)


@pytest.fixture
def zero_bc():
    return BoundaryData.constant(0.0)


@pytest.fixture
def still_pp():
    return PhysicalParams(nu=0.1, eta=0.1, kappa=0.1, g_mag=0.0, c_g=0.1)
