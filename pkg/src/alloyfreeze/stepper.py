"""One time step of the regularised solidification system.

Order inside a step:

1. solute, implicit diffusion and explicit upwind transport of ``c_l``;
2. temperature, implicit diffusion with wall data at ``t + dt``;
3. momentum, a coupled Stokes-Brinkman solve for ``(v, p)`` with implicit
   viscosity and implicit Carman-Kozeny drag, explicit skew convection and
   explicit buoyancy.

The momentum step solves the saddle-point system directly instead of a
predictor plus pressure projection.  A split projection leaves an O(dt)
pressure-gradient velocity inside the solid, which the drag never sees;
the coupled solve lets the drag act on the final velocity.
"""
from __future__ import annotations

import functools
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import CflExceeded, EllipticDiverged, NonFinite
from .field_core import (
    BoundaryData, Grid, Operators, State, VectorField, advect_scalar_flux,
    advect_velocity_skew, div, faces_from_cells,
)
from .phase_model import (
    PhaseDiagram, PhysicalParams, buoyancy, carman_kozeny, liquid_concentration,
    solid_fraction,
)

log = logging.getLogger(__name__)

MOMENTUM_COEFFS = ("1", "rho")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    eps: float = 0.1
    cfl_max: float = 0.25
    elliptic_tol: float = 1e-12
    elliptic_max_iter: int = 5000
    momentum_time_coeff: str = "1"
    freeze_velocity: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if not self.cfl_max > 0:
            raise ValueError("cfl_max must be > 0")
        if not self.elliptic_tol > 0:
            raise ValueError("elliptic_tol must be > 0")
        if self.elliptic_max_iter < 1:
            raise ValueError("elliptic_max_iter must be >= 1")
        if self.momentum_time_coeff not in MOMENTUM_COEFFS:
            raise ValueError(f"momentum_time_coeff must be one of {MOMENTUM_COEFFS}")

    def time_coeff(self, pp: PhysicalParams) -> float:
        return pp.rho if self.momentum_time_coeff == "rho" else 1.0


@functools.lru_cache(maxsize=16)
def operators(grid: Grid) -> Operators:
    return Operators(grid)


def _lap_for(ops: Operators, bc_kind: str):
    if bc_kind == "neumann":
        return ops.lap_c
    if bc_kind == "theta":
        return ops.lap_theta
    raise ValueError(f"unknown bc_kind {bc_kind!r}")


def solve_helmholtz(rhs, grid: Grid, *, coeff=1.0, diffusivity: float, dt: float,
                    bc_kind: str = "neumann", x0=None, tol: float = 1e-12,
                    max_iter: int = 5000) -> np.ndarray:
    """Solve ``coeff * x - dt * diffusivity * L x = rhs`` on cell centres.

    ``L`` is the five-point Laplacian with homogeneous Neumann walls
    (``bc_kind="neumann"``) or with ghost Dirichlet walls on bottom and top
    (``bc_kind="theta"``); inhomogeneous wall data belong in ``rhs``.
    Jacobi-preconditioned conjugate gradients; the operator is SPD for
    ``coeff >= 1``.
    """
    rhs = np.asarray(rhs, dtype=float)
    shape = (grid.nx, grid.ny)
    if rhs.shape != shape:
        raise ValueError(f"rhs has shape {rhs.shape}, expected {shape}")
    coeff = np.broadcast_to(np.asarray(coeff, dtype=float), shape).ravel()
    if np.any(coeff < 1.0):
        raise ValueError("coeff must be >= 1 pointwise")
    if diffusivity < 0 or dt <= 0:
        raise ValueError("need diffusivity >= 0 and dt > 0")
    b = rhs.ravel()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(shape)
    A = sp.diags(coeff) - (dt * diffusivity) * _lap_for(operators(grid), bc_kind)
    A = A.tocsr()
    M = sp.diags(1.0 / A.diagonal())
    guess = None if x0 is None else np.asarray(x0, dtype=float).ravel()
    x, info = spla.cg(A, b, x0=guess, rtol=tol, atol=0.0, maxiter=max_iter, M=M)
    res = np.linalg.norm(A @ x - b)
    # cg's stopping test is on the preconditioned residual; check the true one
    if info != 0 or not np.isfinite(x).all() or res > 10 * tol * bnorm:
        raise EllipticDiverged(
            f"CG failed on the {bc_kind} Helmholtz problem: info={info}, "
            f"relative residual {res / bnorm:.3e} (tol {tol:.1e})"
        )
    return x.reshape(shape)


def cfl_number(vel: VectorField, grid: Grid, dt: float) -> float:
    return max(np.abs(vel.u).max() * dt / grid.dx, np.abs(vel.v).max() * dt / grid.dy)


def drag_faces(c, theta, pd: PhaseDiagram, pp: PhysicalParams, eps: float) -> VectorField:
    """Carman-Kozeny coefficient averaged from cells onto faces."""
    return faces_from_cells(carman_kozeny(pp, solid_fraction(pd, c, theta), eps))


def buoyancy_faces(c, theta, pd: PhaseDiagram, pp: PhysicalParams) -> VectorField:
    fx, fy = buoyancy(pp, pd, c, theta)
    out = faces_from_cells(np.asarray(fy, dtype=float))
    out.u[:] = 0.0
    out.v[:, 0] = out.v[:, -1] = 0.0
    return out


@functools.lru_cache(maxsize=16)
def _saddle_parts(grid: Grid):
    ops = operators(grid)
    lap = sp.block_diag([ops.lap_u, ops.lap_v]).tocsr()
    G = sp.vstack([ops.grad_u, ops.grad_v]).tocsr()
    ncell = grid.nx * grid.ny
    # unknowns (v, q) with q = dt * p; the first continuity row is replaced by q_0 = 0
    Gt = G.T.tolil()
    Gt[0, :] = 0.0
    pin = sp.csr_matrix(([1.0], ([0], [0])), shape=(ncell, ncell))
    return lap, G, Gt.tocsr(), pin


def _momentum(state: State, grid: Grid, pd, pp, cfg: StepConfig):
    ops = operators(grid)
    dt = cfg.dt
    m = cfg.time_coeff(pp)
    nu_, nv_ = ops.n_u, ops.n_v
    drag = ops.pack_vel(drag_faces(state.c, state.theta, pd, pp, cfg.eps))
    fe = buoyancy_faces(state.c, state.theta, pd, pp)
    adv = advect_velocity_skew(state.vel, grid)
    rhs_v = m * ops.pack_vel(state.vel) + dt * (ops.pack_vel(fe) - pp.rho * ops.pack_vel(adv))

    lap, G, Gt, pin = _saddle_parts(grid)
    A = sp.diags(m + dt * drag) - (dt * pp.nu) * lap
    ncell = grid.nx * grid.ny
    K = sp.bmat([[A, G], [Gt, pin]], format="csc")
    rhs = np.concatenate([rhs_v, np.zeros(ncell)])
    try:
        sol = spla.splu(K).solve(rhs)
    except RuntimeError as exc:
        raise EllipticDiverged(f"momentum saddle-point factorisation failed: {exc}") from exc
    vel = ops.unpack_vel(sol[: nu_ + nv_])
    p = sol[nu_ + nv_:].reshape(grid.nx, grid.ny) / dt
    return vel, p - p.mean()


def step(state: State, grid: Grid, pd: PhaseDiagram, pp: PhysicalParams,
         bc: BoundaryData, cfg: StepConfig) -> State:
    """Advance ``state`` by ``cfg.dt``.

    Transport coefficients, drag and buoyancy use the fields at time n.
    Monotone transport needs the advective Courant number summed over a
    cell's outflow faces below ``min(1, 1 / (rho C_p), c_A / c_E)``; the
    default ``cfl_max = 0.25`` keeps it under 0.5.
    """
    dt = cfg.dt
    if not state.is_finite():
        raise NonFinite(f"non-finite values in the input state at t = {state.t:.6g}")
    cfl = cfl_number(state.vel, grid, dt)
    if cfl > cfg.cfl_max:
        raise CflExceeded(f"CFL {cfl:.3g} exceeds cfl_max {cfg.cfl_max:.3g} at t = {state.t:.6g}")
    ops = operators(grid)
    t1 = state.t + dt
    c, theta, vel = state.c, state.theta, state.vel

    cl = np.asarray(liquid_concentration(pd, c, theta), dtype=float)
    rhs_c = c - dt * advect_scalar_flux(vel, cl, grid)
    c_new = solve_helmholtz(rhs_c, grid, diffusivity=pp.eta, dt=dt, bc_kind="neumann",
                            x0=c, tol=cfg.elliptic_tol, max_iter=cfg.elliptic_max_iter)
    # the exact solve conserves the total; remove the solver's round-off drift
    c_new += (c.sum() - c_new.sum()) / c.size

    rhs_t = (theta - dt * pp.rho * pp.C_p * advect_scalar_flux(vel, theta, grid)
             + dt * pp.kappa * ops.theta_data(bc, t1).reshape(theta.shape))
    theta_new = solve_helmholtz(rhs_t, grid, diffusivity=pp.kappa, dt=dt, bc_kind="theta",
                                x0=theta, tol=cfg.elliptic_tol, max_iter=cfg.elliptic_max_iter)

    if cfg.freeze_velocity:
        vel_new, p_new = vel.copy(), state.p.copy()
    else:
        vel_new, p_new = _momentum(state, grid, pd, pp, cfg)
        dmax = np.abs(div(vel_new, grid)).max()
        scale = max(1.0, max(np.abs(vel_new.u).max(), np.abs(vel_new.v).max()) / min(grid.dx, grid.dy))
        if dmax > cfg.elliptic_tol * scale:
            raise EllipticDiverged(f"divergence {dmax:.3e} above tolerance after momentum solve")

    out = State(c_new, theta_new, vel_new, p_new, t1)
    if not out.is_finite():
        raise NonFinite(f"non-finite values after step to t = {t1:.6g}")
    return out
