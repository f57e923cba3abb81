"""Staggered (MAC) discretisation of the rectangular mould.

Layout, with ``i`` along x and ``j`` along y:

* scalars (c, theta, p) live at cell centres, shape ``(nx, ny)``;
* ``u`` lives on vertical faces, shape ``(nx + 1, ny)``;
* ``v`` lives on horizontal faces, shape ``(nx, ny + 1)``.

Boundary segments: bottom and top walls (no-slip, Dirichlet temperature),
left and right walls (free slip, adiabatic).  Concentration is Neumann on
every wall.  Boundary conditions are realised with ghost values, either
explicitly (``ghosted``) or folded into the sparse operators.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    nx: int
    ny: int
    Lx: float = 1.0
    Ly: float = 1.0

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs nx, ny >= 4")
        if not (self.Lx > 0 and self.Ly > 0):
            raise ValueError("domain extents must be positive")

    @property
    def dx(self) -> float:
        return self.Lx / self.nx

    @property
    def dy(self) -> float:
        return self.Ly / self.ny

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def area(self) -> float:
        return self.Lx * self.Ly

    @property
    def xc(self) -> np.ndarray:
        return (np.arange(self.nx) + 0.5) * self.dx

    @property
    def yc(self) -> np.ndarray:
        return (np.arange(self.ny) + 0.5) * self.dy

    @property
    def xf(self) -> np.ndarray:
        return np.arange(self.nx + 1) * self.dx

    @property
    def yf(self) -> np.ndarray:
        return np.arange(self.ny + 1) * self.dy

    def cell_coords(self):
        return np.meshgrid(self.xc, self.yc, indexing="ij")

    def zeros_cell(self):
        return np.zeros((self.nx, self.ny))

    def zeros_vector(self) -> "VectorField":
        return VectorField(np.zeros((self.nx + 1, self.ny)), np.zeros((self.nx, self.ny + 1)))


@dataclass
class VectorField:
    u: np.ndarray
    v: np.ndarray

    def copy(self) -> "VectorField":
        return VectorField(self.u.copy(), self.v.copy())

    def __add__(self, other):
        return VectorField(self.u + other.u, self.v + other.v)

    def __sub__(self, other):
        return VectorField(self.u - other.u, self.v - other.v)

    def __mul__(self, k):
        return VectorField(self.u * k, self.v * k)

    __rmul__ = __mul__

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.u).all() and np.isfinite(self.v).all())


@dataclass
class State:
    c: np.ndarray
    theta: np.ndarray
    vel: VectorField
    p: np.ndarray
    t: float = 0.0

    def copy(self) -> "State":
        return State(self.c.copy(), self.theta.copy(), self.vel.copy(), self.p.copy(), self.t)

    def is_finite(self) -> bool:
        return bool(
            np.isfinite(self.c).all() and np.isfinite(self.theta).all()
            and self.vel.is_finite() and np.isfinite(self.p).all()
        )

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "State":
        return cls(grid.zeros_cell(), grid.zeros_cell(), grid.zeros_vector(), grid.zeros_cell(), t)


# --------------------------------------------------------------------------
# boundary data


Profile = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class BoundaryData:
    """Temperature imposed on the bottom and top walls.

    ``bottom`` and ``top`` map ``(x, t)`` to wall temperatures.  ``bounds``
    holds ``(inf, sup)`` of the data over the walls and all times; it feeds
    the maximum-principle check.
    """

    bottom: Profile
    top: Profile
    bounds: tuple[float, float]
    period: float | None = None

    @classmethod
    def constant(cls, value: float) -> "BoundaryData":
        f = lambda x, t: np.full(np.shape(x), float(value))
        return cls(f, f, (float(value), float(value)))

    def walls(self, grid: Grid, t: float):
        xb = np.asarray(self.bottom(grid.xc, t), dtype=float)
        xt = np.asarray(self.top(grid.xc, t), dtype=float)
        if xb.shape != (grid.nx,) or xt.shape != (grid.nx,):
            raise ValueError("boundary profile returned the wrong shape")
        if not (np.isfinite(xb).all() and np.isfinite(xt).all()):
            raise ValueError(f"boundary profile is not finite at t = {t}")
        return xb, xt

    def lift(self, grid: Grid, t: float) -> np.ndarray:
        """Cell-centred extension of the wall data, linear in y."""
        tb, tt = self.walls(grid, t)
        s = grid.yc / grid.Ly
        return tb[:, None] * (1.0 - s)[None, :] + tt[:, None] * s[None, :]


# --------------------------------------------------------------------------
# inner products and norms


def inner_product(a, b, grid: Grid) -> float:
    """Discrete L2 inner product.

    Scalars use cell weights.  Vector fields use face weights with boundary
    faces counted half, so a constant field integrates to ``|Omega|`` per
    component.
    """
    if isinstance(a, VectorField):
        if a.u.shape != b.u.shape or a.v.shape != b.v.shape:
            raise ValueError("shape mismatch")
        wu = np.ones(a.u.shape)
        wu[0, :] = wu[-1, :] = 0.5
        wv = np.ones(a.v.shape)
        wv[:, 0] = wv[:, -1] = 0.5
        return float((np.sum(wu * a.u * b.u) + np.sum(wv * a.v * b.v)) * grid.cell_area)
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sum(a * b) * grid.cell_area)


def norm2(a, grid: Grid) -> float:
    return inner_product(a, a, grid)


def state_norm2(state: State, grid: Grid) -> float:
    """||c||^2 + ||theta||^2 + ||vel||^2; pressure is not part of it."""
    return norm2(state.c, grid) + norm2(state.theta, grid) + norm2(state.vel, grid)


def state_diff_norm2(a: State, b: State, grid: Grid) -> float:
    return (norm2(a.c - b.c, grid) + norm2(a.theta - b.theta, grid)
            + norm2(a.vel - b.vel, grid))


# --------------------------------------------------------------------------
# differential operators


def grad(s: np.ndarray, grid: Grid) -> VectorField:
    """Cell-centred scalar to face gradient; wall-normal faces are zero."""
    nx, ny = s.shape
    g = VectorField(np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)))
    g.u[1:-1, :] = (s[1:, :] - s[:-1, :]) / grid.dx
    g.v[:, 1:-1] = (s[:, 1:] - s[:, :-1]) / grid.dy
    return g


def div(w: VectorField, grid: Grid) -> np.ndarray:
    return (w.u[1:, :] - w.u[:-1, :]) / grid.dx + (w.v[:, 1:] - w.v[:, :-1]) / grid.dy


class Ghosted(NamedTuple):
    c: np.ndarray      # (nx+2, ny+2)
    theta: np.ndarray  # (nx+2, ny+2)
    u: np.ndarray      # (nx+1, ny+2)
    v: np.ndarray      # (nx+2, ny+1)


def _pad_neumann(s):
    return np.pad(s, 1, mode="edge")


def ghosted(state: State, bc: BoundaryData, grid: Grid, t: float | None = None) -> Ghosted:
    """Ghost-padded copies of the fields carrying every boundary condition."""
    t = state.t if t is None else t
    c = _pad_neumann(state.c)
    th = _pad_neumann(state.theta)
    tb, tt = bc.walls(grid, t)
    th[1:-1, 0] = 2.0 * tb - state.theta[:, 0]
    th[1:-1, -1] = 2.0 * tt - state.theta[:, -1]
    u = np.zeros((grid.nx + 1, grid.ny + 2))
    u[:, 1:-1] = state.vel.u
    u[0, :] = u[-1, :] = 0.0
    u[:, 0] = -u[:, 1]           # no slip on bottom
    u[:, -1] = -u[:, -2]         # and top
    v = np.zeros((grid.nx + 2, grid.ny + 1))
    v[1:-1, :] = state.vel.v
    v[:, 0] = v[:, -1] = 0.0
    v[0, :] = v[1, :]            # free slip on the vertical walls
    v[-1, :] = v[-2, :]
    return Ghosted(c, th, u, v)


def apply_bc(state: State, bc: BoundaryData, grid: Grid, t: float | None = None) -> State:
    """Return a copy whose wall-normal velocity faces are zero.

    Scalar conditions are carried by ghost values (see ``ghosted``) and by
    the operators, so the cell values themselves are unchanged.  The
    temperature data are evaluated here so that a broken profile fails early.
    """
    out = state.copy()
    bc.walls(grid, state.t if t is None else t)
    out.vel.u[0, :] = out.vel.u[-1, :] = 0.0
    out.vel.v[:, 0] = out.vel.v[:, -1] = 0.0
    return out


def laplacian_padded(sp_: np.ndarray, grid: Grid) -> np.ndarray:
    """Five-point Laplacian of the interior of a ghost-padded array."""
    return ((sp_[2:, 1:-1] - 2 * sp_[1:-1, 1:-1] + sp_[:-2, 1:-1]) / grid.dx**2
            + (sp_[1:-1, 2:] - 2 * sp_[1:-1, 1:-1] + sp_[1:-1, :-2]) / grid.dy**2)


def laplacian(s: np.ndarray, grid: Grid) -> np.ndarray:
    """Laplacian of a cell field with homogeneous Neumann walls."""
    return laplacian_padded(_pad_neumann(s), grid)


def vector_laplacian(vel: VectorField, grid: Grid) -> VectorField:
    """Laplacian of the velocity with no-slip on bottom/top and free slip on
    the sides; only interior faces are filled."""
    st = State(np.zeros((grid.nx, grid.ny)), np.zeros((grid.nx, grid.ny)), vel, np.zeros((grid.nx, grid.ny)))
    g = ghosted(st, BoundaryData.constant(0.0), grid)
    out = grid.zeros_vector()
    u, v = g.u, g.v
    out.u[1:-1, :] = ((u[2:, 1:-1] - 2 * u[1:-1, 1:-1] + u[:-2, 1:-1]) / grid.dx**2
                      + (u[1:-1, 2:] - 2 * u[1:-1, 1:-1] + u[1:-1, :-2]) / grid.dy**2)
    out.v[:, 1:-1] = ((v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / grid.dx**2
                      + (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / grid.dy**2)
    return out


def upwind_fluxes(vel: VectorField, q: np.ndarray) -> VectorField:
    """Face fluxes ``vel * q`` with ``q`` taken from the upwind cell.

    On wall faces the adjacent cell value is used; with ``vel . n = 0`` the
    wall flux vanishes.
    """
    nx, ny = q.shape
    fu = np.zeros((nx + 1, ny))
    fv = np.zeros((nx, ny + 1))
    uu = vel.u[1:-1, :]
    fu[1:-1, :] = np.where(uu > 0, uu * q[:-1, :], uu * q[1:, :])
    fu[0, :] = vel.u[0, :] * q[0, :]
    fu[-1, :] = vel.u[-1, :] * q[-1, :]
    vv = vel.v[:, 1:-1]
    fv[:, 1:-1] = np.where(vv > 0, vv * q[:, :-1], vv * q[:, 1:])
    fv[:, 0] = vel.v[:, 0] * q[:, 0]
    fv[:, -1] = vel.v[:, -1] * q[:, -1]
    return VectorField(fu, fv)


def advect_scalar_flux(vel: VectorField, q: np.ndarray, grid: Grid) -> np.ndarray:
    """div(vel q) with first-order upwind face values."""
    return div(upwind_fluxes(vel, q), grid)


def advect_velocity_skew(vel: VectorField, grid: Grid, transported: VectorField | None = None) -> VectorField:
    """Skew-symmetric convection C(vel) w, with w = vel by default.

    Each momentum control volume sums ``F_f * w_nb / 2`` over its faces,
    where ``F_f`` is the outward volume flux.  Pairs of neighbouring
    volumes share a face with opposite fluxes, so ``(C(vel) w, w) = 0``
    holds exactly for any ``vel`` with zero wall-normal component.
    """
    w = vel if transported is None else transported
    dx, dy = grid.dx, grid.dy
    u, v = vel.u, vel.v
    nx, ny = grid.nx, grid.ny
    area = dx * dy
    out = grid.zeros_vector()

    # u control volumes: interior u-faces i = 1..nx-1
    wu = w.u
    ue = 0.5 * (u[1:-1, :] + u[2:, :]) * dy
    uw = -0.5 * (u[:-2, :] + u[1:-1, :]) * dy
    vn = 0.5 * (v[:-1, 1:] + v[1:, 1:]) * dx        # at y_{j+1}, shape (nx-1, ny)
    vs = -0.5 * (v[:-1, :-1] + v[1:, :-1]) * dx     # at y_j
    north = np.zeros_like(wu[1:-1, :])
    north[:, :-1] = wu[1:-1, 1:]
    south = np.zeros_like(wu[1:-1, :])
    south[:, 1:] = wu[1:-1, :-1]
    out.u[1:-1, :] = (ue * wu[2:, :] + uw * wu[:-2, :] + vn * north + vs * south) / (2 * area)

    # v control volumes: interior v-faces j = 1..ny-1
    wv = w.v
    vn2 = 0.5 * (v[:, 1:-1] + v[:, 2:]) * dx
    vs2 = -0.5 * (v[:, :-2] + v[:, 1:-1]) * dx
    ue2 = 0.5 * (u[1:, :-1] + u[1:, 1:]) * dy       # at x_{i+1}, shape (nx, ny-1)
    uw2 = -0.5 * (u[:-1, :-1] + u[:-1, 1:]) * dy    # at x_i
    east = np.zeros_like(wv[:, 1:-1])
    east[:-1, :] = wv[1:, 1:-1]
    west = np.zeros_like(wv[:, 1:-1])
    west[1:, :] = wv[:-1, 1:-1]
    out.v[:, 1:-1] = (vn2 * wv[:, 2:] + vs2 * wv[:, :-2] + ue2 * east + uw2 * west) / (2 * area)
    return out


def cell_speed2(vel: VectorField) -> np.ndarray:
    """Squared speed at cell centres from face averages."""
    uc = 0.5 * (vel.u[1:, :] + vel.u[:-1, :])
    vc = 0.5 * (vel.v[:, 1:] + vel.v[:, :-1])
    return uc**2 + vc**2


def faces_from_cells(q: np.ndarray) -> VectorField:
    """Average a cell field onto the faces (walls take the adjacent cell)."""
    qu = np.empty((q.shape[0] + 1, q.shape[1]))
    qu[1:-1, :] = 0.5 * (q[1:, :] + q[:-1, :])
    qu[0, :] = q[0, :]
    qu[-1, :] = q[-1, :]
    qv = np.empty((q.shape[0], q.shape[1] + 1))
    qv[:, 1:-1] = 0.5 * (q[:, 1:] + q[:, :-1])
    qv[:, 0] = q[:, 0]
    qv[:, -1] = q[:, -1]
    return VectorField(qu, qv)


def streamfunction_velocity(psi: np.ndarray, grid: Grid) -> VectorField:
    """Exactly solenoidal face velocity from a corner streamfunction.

    ``psi`` has shape ``(nx + 1, ny + 1)``; it is zeroed on the boundary so
    that every wall face carries zero normal velocity.
    """
    psi = psi.copy()
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    u = (psi[:, 1:] - psi[:, :-1]) / grid.dy
    v = -(psi[1:, :] - psi[:-1, :]) / grid.dx
    return VectorField(u, v)


# --------------------------------------------------------------------------
# sparse assembly; unknowns are flattened in C order (index i * ny + j)


def _second_difference(n: int, h: float, left: str, right: str) -> sp.csr_matrix:
    main = -2.0 * np.ones(n)
    off = np.ones(n - 1)
    ends = {"neumann": -1.0, "ghost_dirichlet": -3.0, "face_dirichlet": -2.0}
    main[0] = ends[left]
    main[-1] = ends[right]
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h**2


@dataclass
class Operators:
    """Sparse matrices for a grid, assembled once."""

    grid: Grid
    lap_c: sp.csr_matrix = field(init=False)
    lap_theta: sp.csr_matrix = field(init=False)
    lap_u: sp.csr_matrix = field(init=False)
    lap_v: sp.csr_matrix = field(init=False)
    grad_u: sp.csr_matrix = field(init=False)
    grad_v: sp.csr_matrix = field(init=False)

    def __post_init__(self):
        g = self.grid
        nx, ny, dx, dy = g.nx, g.ny, g.dx, g.dy
        ix, iy = sp.identity(nx, format="csr"), sp.identity(ny, format="csr")
        neu_x = _second_difference(nx, dx, "neumann", "neumann")
        neu_y = _second_difference(ny, dy, "neumann", "neumann")
        dir_y = _second_difference(ny, dy, "ghost_dirichlet", "ghost_dirichlet")
        self.lap_c = (sp.kron(neu_x, iy) + sp.kron(ix, neu_y)).tocsr()
        self.lap_theta = (sp.kron(neu_x, iy) + sp.kron(ix, dir_y)).tocsr()
        fx = _second_difference(nx - 1, dx, "face_dirichlet", "face_dirichlet")
        fy = _second_difference(ny - 1, dy, "face_dirichlet", "face_dirichlet")
        self.lap_u = (sp.kron(fx, iy) + sp.kron(sp.identity(nx - 1), dir_y)).tocsr()
        self.lap_v = (sp.kron(neu_x, sp.identity(ny - 1)) + sp.kron(ix, fy)).tocsr()
        dxm = sp.diags([-np.ones(nx - 1), np.ones(nx - 1)], [0, 1], shape=(nx - 1, nx)) / dx
        dym = sp.diags([-np.ones(ny - 1), np.ones(ny - 1)], [0, 1], shape=(ny - 1, ny)) / dy
        self.grad_u = sp.kron(dxm, iy).tocsr()
        self.grad_v = sp.kron(ix, dym).tocsr()

    @property
    def n_u(self) -> int:
        return (self.grid.nx - 1) * self.grid.ny

    @property
    def n_v(self) -> int:
        return self.grid.nx * (self.grid.ny - 1)

    def theta_data(self, bc: BoundaryData, t: float) -> np.ndarray:
        """Boundary contribution b with lap_theta @ x + b the Dirichlet Laplacian."""
        g = self.grid
        tb, tt = bc.walls(g, t)
        b = np.zeros((g.nx, g.ny))
        b[:, 0] += 2.0 * tb / g.dy**2
        b[:, -1] += 2.0 * tt / g.dy**2
        return b.ravel()

    def pack_vel(self, vel: VectorField) -> np.ndarray:
        return np.concatenate([vel.u[1:-1, :].ravel(), vel.v[:, 1:-1].ravel()])

    def unpack_vel(self, x: np.ndarray) -> VectorField:
        g = self.grid
        out = g.zeros_vector()
        out.u[1:-1, :] = x[: self.n_u].reshape(g.nx - 1, g.ny)
        out.v[:, 1:-1] = x[self.n_u: self.n_u + self.n_v].reshape(g.nx, g.ny - 1)
        return out


def dirichlet_form(x: np.ndarray, lap: sp.spmatrix, grid: Grid) -> float:
    """-(L x, x): the discrete ||grad x||^2 tied to operator ``lap``."""
    x = np.ravel(x)
    return float(-(x @ (lap @ x)) * grid.cell_area)


def velocity_dirichlet_form(vel: VectorField, ops: Operators) -> float:
    u = vel.u[1:-1, :].ravel()
    v = vel.v[:, 1:-1].ravel()
    return float(-(u @ (ops.lap_u @ u) + v @ (ops.lap_v @ v)) * ops.grid.cell_area)


def with_time(state: State, t: float) -> State:
    return replace(state.copy(), t=t)
