import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloyfreeze.field_core import (
    BoundaryData, Grid, Operators, State, advect_scalar_flux, advect_velocity_skew, apply_bc,
    div, ghosted, grad, inner_product, laplacian, laplacian_padded, norm2, state_norm2,
    vector_laplacian,
)

from conftest import random_solenoidal

seeds = st.integers(0, 2**32 - 1)


def test_grid_invariants():
    g = Grid(8, 4, 2.0, 1.0)
    assert g.dx == 0.25 and g.dy == 0.25 and g.area == 2.0
    with pytest.raises(ValueError):
        Grid(3, 8)
    with pytest.raises(ValueError):
        Grid(8, 8, 0.0, 1.0)


def test_inner_product_basics(rng):
    g = Grid(16, 16)
    one = np.ones((16, 16))
    assert inner_product(one, one, g) == pytest.approx(1.0)
    x, y = g.cell_coords()
    f = np.cos(np.pi * x)
    h = np.cos(2 * np.pi * x)
    assert abs(inner_product(f, h, g)) < 1e-12
    a, b = rng.standard_normal((2, 16, 16))
    assert inner_product(a, b, g) == inner_product(b, a, g)
    with pytest.raises(ValueError):
        inner_product(a, np.ones((16, 15)), g)
    vel = g.zeros_vector()
    vel.u[:] = 1.0
    vel.v[:] = 1.0
    assert inner_product(vel, vel, g) == pytest.approx(2.0)


def test_state_norm_is_sum_of_parts(rng):
    g = Grid(8, 8)
    s = State(rng.random((8, 8)), rng.random((8, 8)), random_solenoidal(g, rng), rng.random((8, 8)))
    assert state_norm2(s, g) == norm2(s.c, g) + norm2(s.theta, g) + norm2(s.vel, g)


def test_laplacian_examples():
    g = Grid(10, 10)
    x, y = g.cell_coords()
    assert np.abs(laplacian(np.full((10, 10), 3.0), g)).max() == 0.0
    assert np.allclose(laplacian(x**2, g)[1:-1, :], 2.0, atol=1e-10)
    lin = 2 * x - 3 * y
    assert np.abs(div(grad(lin, g), g)[1:-1, 1:-1]).max() < 1e-10


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_adjointness(seed):
    r = np.random.default_rng(seed)
    g = Grid(32, 32)
    s = r.standard_normal((32, 32))
    w = g.zeros_vector()
    w.u[1:-1] = r.standard_normal((31, 32))
    w.v[:, 1:-1] = r.standard_normal((32, 31))
    assert abs(inner_product(grad(s, g), w, g) + inner_product(s, div(w, g), g)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_skew_symmetry(seed):
    r = np.random.default_rng(seed)
    g = Grid(32, 32)
    vel = random_solenoidal(g, r)
    assert np.abs(div(vel, g)).max() < 1e-12
    assert abs(inner_product(advect_velocity_skew(vel, g), vel, g)) < 1e-12
    # also for a transported field other than the transporting velocity
    w = g.zeros_vector()
    w.u[1:-1] = r.standard_normal((31, 32))
    w.v[:, 1:-1] = r.standard_normal((32, 31))
    assert abs(inner_product(advect_velocity_skew(vel, g, w), w, g)) < 1e-12


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_flux_conservation(seed):
    r = np.random.default_rng(seed)
    g = Grid(32, 32)
    vel = random_solenoidal(g, r)
    q = r.standard_normal((32, 32))
    out = advect_scalar_flux(vel, q, g)
    direct = sum(out[i, j] for i in range(32) for j in range(32)) * g.cell_area
    assert abs(direct) < 1e-12
    assert abs(out.sum() * g.cell_area) < 1e-12


def test_advection_trivial_cases(rng):
    g = Grid(12, 12)
    q = rng.random((12, 12))
    assert np.all(advect_scalar_flux(g.zeros_vector(), q, g) == 0)
    vel = random_solenoidal(g, rng)
    assert np.abs(advect_scalar_flux(vel, np.full((12, 12), 0.7), g)).max() < 1e-12
    zero = advect_velocity_skew(g.zeros_vector(), g)
    assert not zero.u.any() and not zero.v.any()
    uni = g.zeros_vector()
    uni.u[1:-1] = 1.5
    out = advect_velocity_skew(uni, g)
    assert np.abs(out.u[2:-2, 2:-2]).max() < 1e-12


def test_ghosts_realise_boundary_conditions(rng):
    g = Grid(8, 8)
    s = State(rng.random((8, 8)), rng.random((8, 8)), random_solenoidal(g, rng), g.zeros_cell())
    gh = ghosted(s, BoundaryData.constant(5.0), g)
    # Dirichlet: interpolated wall temperature equals the data
    assert np.allclose(0.5 * (gh.theta[1:-1, 0] + gh.theta[1:-1, 1]), 5.0)
    assert np.allclose(0.5 * (gh.theta[1:-1, -1] + gh.theta[1:-1, -2]), 5.0)
    # Neumann: zero normal difference
    assert np.all(gh.c[0, 1:-1] == gh.c[1, 1:-1]) and np.all(gh.c[1:-1, -1] == gh.c[1:-1, -2])
    assert np.all(gh.theta[0, 1:-1] == gh.theta[1, 1:-1])
    # no slip on bottom/top, free slip on the sides
    assert np.allclose(0.5 * (gh.u[:, 0] + gh.u[:, 1]), 0.0)
    assert np.all(gh.v[0, :] == gh.v[1, :])


def test_apply_bc_zeroes_normal_faces(rng):
    g = Grid(8, 8)
    vel = g.zeros_vector()
    vel.u[:] = 1.0
    vel.v[:] = 1.0
    s = apply_bc(State(g.zeros_cell(), g.zeros_cell(), vel, g.zeros_cell()), BoundaryData.constant(0.0), g)
    assert not s.vel.u[0].any() and not s.vel.u[-1].any()
    assert not s.vel.v[:, 0].any() and not s.vel.v[:, -1].any()

    def broken(x, t):
        return np.full(np.shape(x), np.nan)

    with pytest.raises(ValueError):
        apply_bc(s, BoundaryData(broken, broken, (0, 0)), g)


def test_sparse_operators_match_stencils(rng):
    g = Grid(9, 7, 1.3, 0.8)
    ops = Operators(g)
    s = rng.standard_normal((9, 7))
    assert np.allclose((ops.lap_c @ s.ravel()).reshape(9, 7), laplacian(s, g))
    bc = BoundaryData(lambda x, t: 0.2 + x, lambda x, t: 1.0 - x, (0, 1.2))
    st_ = State(s, s, g.zeros_vector(), s)
    padded = ghosted(st_, bc, g).theta
    assert np.allclose((ops.lap_theta @ s.ravel() + ops.theta_data(bc, 0.0)).reshape(9, 7),
                       laplacian_padded(padded, g))
    vel = random_solenoidal(g, rng)
    vl = vector_laplacian(vel, g)
    x = ops.pack_vel(vel)
    assert np.allclose(ops.lap_u @ x[: ops.n_u], vl.u[1:-1].ravel())
    assert np.allclose(ops.lap_v @ x[ops.n_u:], vl.v[:, 1:-1].ravel())
    back = ops.unpack_vel(x)
    assert np.array_equal(back.u, vel.u) and np.array_equal(back.v, vel.v)
    # div is minus the adjoint of grad
    G = np.vstack([ops.grad_u.toarray(), ops.grad_v.toarray()])
    assert np.allclose(-G.T @ x, div(vel, g).ravel())
