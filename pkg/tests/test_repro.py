import math

import numpy as np
import pytest

from alloyfreeze.errors import NotConverged
from alloyfreeze.field_core import BoundaryData, Grid, State, state_diff_norm2
from alloyfreeze.phase_model import PhysicalParams
from alloyfreeze.repro import (
    ReproConfig, eps_continuation, find_reproductive, propagate, raise_if_not_converged,
    scale_deviation, steps_for,
)
from alloyfreeze.stepper import StepConfig

from conftest import random_state


def test_repro_config_validation():
    ReproConfig(homotopy_schedule=[0.5, 1.0], eps_schedule=[0.1, 0.01])
    for bad in (dict(T=0.0), dict(relaxation=0.0), dict(homotopy_schedule=[1.0, 0.5]),
                dict(eps_schedule=[0.01, 0.1]), dict(eps_schedule=[])):
        with pytest.raises(ValueError):
            ReproConfig(**bad)


def test_steps_for():
    assert steps_for(1.0, 0.02) == (50, 0.02)
    n, dt = steps_for(0.05, 0.02)
    assert n == 3 and dt == pytest.approx(0.05 / 3)


def test_propagate_identity_and_rest(small_grid, pd, zero_bc, rng):
    g = small_grid
    x0 = random_state(g, rng)
    out = propagate(x0, g, pd, PhysicalParams(), zero_bc, StepConfig(dt=0.1), 0.0)
    assert state_diff_norm2(out, x0, g) == 0.0
    zero = propagate(State.zeros(g), g, pd, PhysicalParams(), zero_bc, StepConfig(dt=0.1), 0.5)
    assert not zero.c.any() and not zero.theta.any() and not zero.vel.v.any()
    seen = []
    propagate(State.zeros(g), g, pd, PhysicalParams(), zero_bc, StepConfig(dt=0.02), 0.05,
              callback=lambda s: seen.append(s.t))
    assert len(seen) == 4 and seen[-1] == pytest.approx(0.05)


def test_propagate_heat_mode(pd, zero_bc):
    g = Grid(24, 24)
    x, y = g.cell_coords()
    mode = np.sin(np.pi * y)
    x0 = State(g.zeros_cell(), mode.copy(), g.zeros_vector(), g.zeros_cell())
    pp = PhysicalParams(kappa=0.5, g_mag=0.0)
    out = propagate(x0, g, pd, pp, zero_bc, StepConfig(dt=1e-3, freeze_velocity=True), 0.1)
    ratio = np.linalg.norm(out.theta) / np.linalg.norm(mode)
    assert ratio == pytest.approx(math.exp(-0.5 * np.pi**2 * 0.1), rel=0.01)


def test_zero_data_converges_in_one_iteration(small_grid, pd, zero_bc):
    rep = find_reproductive(State.zeros(small_grid), small_grid, pd, PhysicalParams(g_mag=0.0),
                            zero_bc, StepConfig(dt=0.1), ReproConfig(T=0.5))
    assert rep.converged and rep.iterations == 1 and rep.residual_history == [0.0]


def test_steady_state_oracle(small_grid, pd, rng):
    g = small_grid
    pp = PhysicalParams(g_mag=0.0, c_g=0.12)
    bc = BoundaryData.constant(0.6)
    guess = random_state(g, rng, cbar=0.12, c_amp=0.05, th_amp=0.3)
    guess.theta += 0.6
    rcfg = ReproConfig(T=1.0, fp_tol=1e-8)
    rep = find_reproductive(guess, g, pd, pp, bc, StepConfig(dt=0.05), rcfg)
    assert rep.converged
    assert all(np.isfinite(rep.residual_history)) and rep.residual_history[-1] <= rcfg.fp_tol
    x = rep.final_state
    exact = State(np.full((12, 12), 0.12), np.full((12, 12), 0.6), g.zeros_vector(), g.zeros_cell())
    assert math.sqrt(state_diff_norm2(x, exact, g)) <= rcfg.fp_tol
    again = propagate(x, g, pd, pp, bc, StepConfig(dt=0.05), rcfg.T)
    assert math.sqrt(state_diff_norm2(again, x, g)) <= rcfg.fp_tol


def test_zero_data_contraction(small_grid, pd, zero_bc, rng):
    g = small_grid
    pp = PhysicalParams(g_mag=0.0)
    cfg = StepConfig(dt=0.05)
    for _ in range(3):
        X = random_state(g, rng, v_scale=0.05)
        Y = random_state(g, rng, v_scale=0.05)
        before = state_diff_norm2(X, Y, g)
        after = state_diff_norm2(propagate(X, g, pd, pp, zero_bc, cfg, 0.5),
                                 propagate(Y, g, pd, pp, zero_bc, cfg, 0.5), g)
        assert after < before


def test_not_converged_is_reported(small_grid, pd, rng):
    g = small_grid
    bc = BoundaryData.constant(0.6)
    guess = random_state(g, rng, th_amp=0.3)
    rep = find_reproductive(guess, g, pd, PhysicalParams(g_mag=0.0), bc, StepConfig(dt=0.05),
                            ReproConfig(T=0.2, fp_max_iter=2, fp_tol=1e-14))
    assert not rep.converged and rep.iterations == 2
    with pytest.raises(NotConverged) as info:
        raise_if_not_converged(rep)
    assert info.value.report is rep


def test_homotopy_reaches_same_fixed_point(small_grid, pd, rng):
    g = small_grid
    pp = PhysicalParams(g_mag=0.0, c_g=0.1)
    bc = BoundaryData.constant(0.6)
    guess = random_state(g, rng, th_amp=0.2)
    guess.theta += 0.6
    cfg = StepConfig(dt=0.05)
    direct = find_reproductive(guess, g, pd, pp, bc, cfg, ReproConfig(T=0.5))
    homo = find_reproductive(guess, g, pd, pp, bc, cfg, ReproConfig(T=0.5, homotopy_schedule=[0.5, 1.0]))
    assert direct.converged and homo.converged
    assert len(homo.sub_reports) == 2 and homo.sub_reports[0].lam == 0.5
    assert math.sqrt(state_diff_norm2(direct.final_state, homo.final_state, g)) < 1e-7


def test_scale_deviation_keeps_mean_and_lift(small_grid, rng):
    g = small_grid
    x = random_state(g, rng, v_scale=0.1)
    lift = np.full((12, 12), 0.3)
    y = scale_deviation(x, 0.25, lift)
    assert y.c.mean() == pytest.approx(x.c.mean(), abs=1e-15)
    assert np.allclose(y.theta - lift, 0.25 * (x.theta - lift))
    assert np.allclose(y.vel.u, 0.25 * x.vel.u)


def test_eps_continuation_without_flow(small_grid, pd, rng):
    g = small_grid
    pp = PhysicalParams(g_mag=0.0, c_g=0.1)
    bc = BoundaryData(lambda x, t: 0.1 + 0 * x, lambda x, t: 0.9 + 0 * x, (0.1, 0.9))
    guess = State(np.full((12, 12), 0.1), bc.lift(g, 0.0), g.zeros_vector(), g.zeros_cell())
    rcfg = ReproConfig(T=0.5, eps_schedule=[0.1, 0.01])
    results, K = eps_continuation(guess, g, pd, pp, bc, StepConfig(dt=0.05), rcfg)
    assert [r.eps for r in results] == [0.1, 0.01]
    assert K.any()
    assert all(r.ok and r.solid_velocity_integral == 0.0 for r in results)
    single, _ = eps_continuation(guess, g, pd, pp, bc, StepConfig(dt=0.05), ReproConfig(T=0.5, eps_schedule=[1.0]))
    ref = find_reproductive(guess, g, pd, pp, bc, StepConfig(dt=0.05, eps=1.0), ReproConfig(T=0.5))
    assert single[0].report.residual_history == ref.residual_history
