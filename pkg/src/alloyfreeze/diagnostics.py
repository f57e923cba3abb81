"""Trajectory recording and the checks run on recorded trajectories.

Every check is a pure function of a ``TrajectoryStats`` record, so it can
be re-run on a CSV read back from disk.

Energy bookkeeping uses the deviation vector
``Z = (c - cbar, theta - Theta(t), v)`` where ``cbar`` is the mean solute
and ``Theta`` is the cell-centred lift of the wall temperature, linear in y.
Per step the scheme satisfies

    E' + dt D' <= E + dt * (A |v|^2 + B)

with ``E = |c~|^2 + |theta~|^2 + m |v|^2``, ``D`` the dissipation and

    A = c_E^2 / eta + 2 (rho C_p theta_max)^2 / kappa
    B = 2 C_theta |g|^2 / kappa + C_v |F_e|^2 / nu + dt rho^2 |C(v) v|^2 / m

where ``C_theta`` and ``C_v`` are inverse smallest eigenvalues of the
discrete operators and ``g`` is the residual of the lift in the heat
equation.  Each term comes from Cauchy-Schwarz and Young on the discrete
equations; none is tuned.
"""
from __future__ import annotations

import csv
import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import EmptySolidRegion
from .field_core import (
    BoundaryData, Grid, State, advect_velocity_skew, dirichlet_form, div, inner_product,
    norm2, velocity_dirichlet_form,
)
from .phase_model import PhaseDiagram, PhysicalParams, liquidus, solid_fraction
from .stepper import StepConfig, buoyancy_faces, operators

TIMESERIES_COLUMNS = (
    "t", "normZ2", "dissipation", "c_min", "c_max", "theta_min", "theta_max",
    "total_solute", "solid_v2", "div_inf",
)
ENERGY_COLUMNS = (
    "t", "c2", "th2", "v2", "gc2", "gth2", "gv2", "fe2", "adv2", "lift2", "theta_absmax",
    "c_argmin", "c_argmax", "theta_argmin", "theta_argmax",
)


# --------------------------------------------------------------------------
# discrete Poincare constants


def smallest_eigenvalue(A, *, deflate_constant: bool = False, tol: float = 1e-12,
                        max_iter: int = 2000, seed: int = 0) -> float:
    """Smallest eigenvalue of an SPD (or PSD with constant kernel) matrix.

    Shifted inverse iteration with a Rayleigh-quotient estimate.  With
    ``deflate_constant`` the constant vector is projected out each sweep,
    giving the smallest nonzero eigenvalue of a Neumann operator.
    """
    A = sp.csc_matrix(A)
    n = A.shape[0]
    shift = 1.0 if deflate_constant else 0.0
    lu = spla.splu((A + shift * sp.identity(n, format="csc")).tocsc())
    x = np.random.default_rng(seed).standard_normal(n)
    lam = math.inf
    for _ in range(max_iter):
        if deflate_constant:
            x -= x.mean()
        x /= np.linalg.norm(x)
        y = lu.solve(x)
        if deflate_constant:
            y -= y.mean()
        y /= np.linalg.norm(y)
        new = float(y @ (A @ y))
        if abs(new - lam) <= tol * abs(new):
            return new
        lam, x = new, y
    return lam


@functools.lru_cache(maxsize=16)
def poincare_eigenvalues(grid: Grid) -> dict:
    ops = operators(grid)
    return {
        "c": smallest_eigenvalue(-ops.lap_c, deflate_constant=True),
        "theta": smallest_eigenvalue(-ops.lap_theta),
        "u": smallest_eigenvalue(-ops.lap_u),
        "v": smallest_eigenvalue(-ops.lap_v),
    }


# --------------------------------------------------------------------------
# trajectory record


@dataclass
class TrajectoryStats:
    series: dict
    energy: dict
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.series["t"])

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.series["t"])

    def col(self, name) -> np.ndarray:
        src = self.series if name in self.series else self.energy
        return np.asarray(src[name], dtype=float)

    def write(self, out_dir, prefix: str = "") -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_csv(out / f"{prefix}timeseries.csv", TIMESERIES_COLUMNS, self.series)
        _write_csv(out / f"{prefix}energy.csv", ENERGY_COLUMNS, self.energy)
        (out / f"{prefix}meta.json").write_text(json.dumps(self.meta, indent=2, sort_keys=True) + "\n")
        return out / f"{prefix}timeseries.csv"

    @classmethod
    def read(cls, timeseries_path) -> "TrajectoryStats":
        p = Path(timeseries_path)
        prefix = p.name[: -len("timeseries.csv")] if p.name.endswith("timeseries.csv") else ""
        series = _read_csv(p, TIMESERIES_COLUMNS)
        energy_path = p.with_name(f"{prefix}energy.csv")
        meta_path = p.with_name(f"{prefix}meta.json")
        energy = _read_csv(energy_path, ENERGY_COLUMNS) if energy_path.exists() else {}
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(series, energy, meta)


def _fmt(x) -> str:
    return repr(float(x))


def _write_csv(path, columns, data):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in zip(*(data[c] for c in columns)):
            w.writerow([_fmt(x) for x in row])


def _read_csv(path, columns):
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        missing = [c for c in columns if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        rows = [[float(x) for x in row] for row in r if row]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {name: arr[:, k] for k, name in enumerate(header)}


class Recorder:
    """Callback that turns a sequence of states into ``TrajectoryStats``.

    ``K`` fixes the solid region for ``solid_v2``; without it the cells
    with ``f_s = 1`` in the current state are used.
    """

    def __init__(self, grid: Grid, pd: PhaseDiagram, pp: PhysicalParams, bc: BoundaryData,
                 cfg: StepConfig, K: np.ndarray | None = None):
        self.grid, self.pd, self.pp, self.bc, self.cfg = grid, pd, pp, bc, cfg
        self.K = None if K is None else np.asarray(K, dtype=bool)
        self.ops = operators(grid)
        self.series = {c: [] for c in TIMESERIES_COLUMNS}
        self.energy = {c: [] for c in ENERGY_COLUMNS}
        self._prev_lift = None
        self._prev_t = None

    def _lift_residual2(self, t: float, lift: np.ndarray) -> float:
        if self._prev_lift is None:
            return 0.0
        dt = t - self._prev_t
        ops = self.ops
        lap = (ops.lap_theta @ lift.ravel() + ops.theta_data(self.bc, t)).reshape(lift.shape)
        g = -(lift - self._prev_lift) / dt + self.pp.kappa * lap
        return norm2(g, self.grid)

    def __call__(self, s: State):
        grid, pp, ops = self.grid, self.pp, self.ops
        lift = self.bc.lift(grid, s.t)
        cdev = s.c - s.c.mean()
        tdev = s.theta - lift
        c2, th2, v2 = norm2(cdev, grid), norm2(tdev, grid), norm2(s.vel, grid)
        gc2 = dirichlet_form(cdev, ops.lap_c, grid)
        gth2 = dirichlet_form(tdev, ops.lap_theta, grid)
        gv2 = velocity_dirichlet_form(s.vel, ops)
        K = self.K if self.K is not None else np.asarray(solid_fraction(self.pd, s.c, s.theta)) == 1.0
        uc = 0.5 * (s.vel.u[1:, :] + s.vel.u[:-1, :])
        vc = 0.5 * (s.vel.v[:, 1:] + s.vel.v[:, :-1])
        solid_v2 = float(((uc**2 + vc**2)[K]).sum() * grid.cell_area)
        row = {
            "t": s.t,
            "normZ2": c2 + th2 + v2,
            "dissipation": pp.eta * gc2 + pp.kappa * gth2 + pp.nu * gv2,
            "c_min": s.c.min(), "c_max": s.c.max(),
            "theta_min": s.theta.min(), "theta_max": s.theta.max(),
            "total_solute": float(s.c.sum() * grid.cell_area),
            "solid_v2": solid_v2,
            "div_inf": float(np.abs(div(s.vel, grid)).max()),
        }
        fe = buoyancy_faces(s.c, s.theta, self.pd, pp)
        adv = advect_velocity_skew(s.vel, grid)
        erow = {
            "t": s.t, "c2": c2, "th2": th2, "v2": v2, "gc2": gc2, "gth2": gth2, "gv2": gv2,
            "fe2": inner_product(fe, fe, grid), "adv2": inner_product(adv, adv, grid),
            "lift2": self._lift_residual2(s.t, lift),
            "theta_absmax": float(np.abs(s.theta).max()),
            "c_argmin": int(np.argmin(s.c)), "c_argmax": int(np.argmax(s.c)),
            "theta_argmin": int(np.argmin(s.theta)), "theta_argmax": int(np.argmax(s.theta)),
        }
        for k, v in row.items():
            self.series[k].append(float(v))
        for k, v in erow.items():
            self.energy[k].append(float(v))
        self._prev_lift, self._prev_t = lift, s.t

    def stats(self, **extra_meta) -> TrajectoryStats:
        grid, pp, pd = self.grid, self.pp, self.pd
        eig = poincare_eigenvalues(grid)
        meta = {
            "nx": grid.nx, "ny": grid.ny, "Lx": grid.Lx, "Ly": grid.Ly,
            "rho": pp.rho, "C_p": pp.C_p, "eta": pp.eta, "kappa": pp.kappa, "nu": pp.nu,
            "m": self.cfg.time_coeff(pp), "eps": self.cfg.eps,
            "c_E": float(liquidus(pd, pd.theta_E)), "c_g": pp.c_g,
            "theta_data_inf": self.bc.bounds[0], "theta_data_sup": self.bc.bounds[1],
            "lambda_c": eig["c"], "lambda_theta": eig["theta"],
            "lambda_u": eig["u"], "lambda_v": eig["v"],
            "K_cells": -1 if self.K is None else int(self.K.sum()),
        }
        meta.update(extra_meta)
        return TrajectoryStats({k: np.array(v) for k, v in self.series.items()},
                               {k: np.array(v) for k, v in self.energy.items()}, meta)


# --------------------------------------------------------------------------
# checks


@dataclass
class CheckReport:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    asserted: bool = True

    def lines(self) -> list[str]:
        out = [f"{self.name}.passed: {str(self.passed).lower()}"]
        if not self.asserted:
            out.append(f"{self.name}.asserted: false")
        out += [f"{self.name}.{k}: {v}" for k, v in self.measured.items()]
        out += [f"{self.name}.violation: {v}" for v in self.violations[:20]]
        return out

    def to_dict(self) -> dict:
        return {"passed": self.passed, "asserted": self.asserted,
                "measured": self.measured, "violations": self.violations}


def theta_bounds(stats: TrajectoryStats, data_bounds=None) -> tuple[float, float]:
    """``min{inf theta_0, inf data}`` and the matching sup."""
    lo, hi = data_bounds if data_bounds is not None else (
        stats.meta["theta_data_inf"], stats.meta["theta_data_sup"])
    return min(stats.col("theta_min")[0], lo), max(stats.col("theta_max")[0], hi)


def check_max_principles(stats: TrajectoryStats, pd: PhaseDiagram | None = None,
                         data_bounds=None, tol: float = 1e-8) -> CheckReport:
    """Pointwise bounds ``0 <= c <= gamma_l(theta_E)`` and theta between the
    extremes of the initial field and the wall data, at every record."""
    c_top = float(liquidus(pd, pd.theta_E)) if pd is not None else stats.meta["c_E"]
    th_lo, th_hi = theta_bounds(stats, data_bounds)
    t = stats.t
    checks = [
        ("c_min", lambda x: x < -tol, 0.0, "c_argmin"),
        ("c_max", lambda x: x > c_top + tol, c_top, "c_argmax"),
        ("theta_min", lambda x: x < th_lo - tol, th_lo, "theta_argmin"),
        ("theta_max", lambda x: x > th_hi + tol, th_hi, "theta_argmax"),
    ]
    violations = []
    for name, bad, bound, where in checks:
        vals = stats.col(name)
        loc = stats.energy.get(where)
        ny = stats.meta.get("ny")
        for k in np.flatnonzero(bad(vals)):
            item = {"step": int(k), "t": float(t[k]), "quantity": name,
                    "value": float(vals[k]), "bound": bound}
            if loc is not None and ny:
                item["cell"] = list(divmod(int(loc[k]), int(ny)))
            violations.append(item)
    measured = {
        "c_min": float(stats.col("c_min").min()), "c_max": float(stats.col("c_max").max()),
        "theta_min": float(stats.col("theta_min").min()),
        "theta_max": float(stats.col("theta_max").max()),
        "c_upper": c_top, "theta_lower": th_lo, "theta_upper": th_hi, "tol": tol,
    }
    return CheckReport("max_principles", not violations, measured, violations)


def total_solute(c: np.ndarray, grid: Grid) -> float:
    return float(np.sum(c) * grid.cell_area)


def check_solute(stats: TrajectoryStats, c_g: float | None = None, tol: float = 1e-12) -> CheckReport:
    c_g = stats.col("total_solute")[0] if c_g is None else c_g
    drift = np.abs(stats.col("total_solute") - c_g)
    limit = tol * max(abs(c_g), 1.0)
    bad = np.flatnonzero(drift > limit)
    viol = [{"step": int(k), "t": float(stats.t[k]), "drift": float(drift[k])} for k in bad]
    return CheckReport("solute", not viol, {"c_g": c_g, "max_drift": float(drift.max()), "limit": limit}, viol)


@dataclass
class EnergyReport:
    passed: bool
    min_slack: float
    worst_step: int
    slack: np.ndarray
    A: np.ndarray
    B: np.ndarray
    tol: float

    def check(self) -> CheckReport:
        viol = [{"step": int(k), "slack": float(self.slack[k])}
                for k in np.flatnonzero(self.slack < -self.tol)]
        return CheckReport("energy", self.passed,
                           {"min_slack": self.min_slack, "worst_step": self.worst_step,
                            "tol": self.tol, "steps": int(self.slack.size)}, viol)


def energy_budget(stats: TrajectoryStats, pp: PhysicalParams | None = None, tol: float = 1e-10) -> EnergyReport:
    """Check the one-step energy recursion for every recorded transition."""
    meta = stats.meta
    rho = pp.rho if pp else meta["rho"]
    C_p = pp.C_p if pp else meta["C_p"]
    eta = pp.eta if pp else meta["eta"]
    kappa = pp.kappa if pp else meta["kappa"]
    nu = pp.nu if pp else meta["nu"]
    m = meta.get("m", 1.0)
    c_E = meta["c_E"]
    C_theta = 1.0 / meta["lambda_theta"]
    C_v = 1.0 / min(meta["lambda_u"], meta["lambda_v"])
    col = stats.col
    E = col("c2") + col("th2") + m * col("v2")
    D = eta * col("gc2") + kappa * col("gth2") + nu * col("gv2")
    dt = np.diff(stats.t)
    if dt.size == 0:
        z = np.zeros(0)
        return EnergyReport(True, math.inf, -1, z, z, z, tol)
    v2 = col("v2")[:-1]
    A = c_E**2 / eta + 2.0 * (rho * C_p * col("theta_absmax")[:-1]) ** 2 / kappa
    B = (2.0 * C_theta / kappa * col("lift2")[1:] + C_v / nu * col("fe2")[:-1]
         + dt * rho**2 * col("adv2")[:-1] / m)
    lhs = E[1:] + dt * D[1:]
    rhs = E[:-1] + dt * (A * v2 + B)
    slack = rhs - lhs
    k = int(np.argmin(slack))
    return EnergyReport(bool(slack.min() >= -tol), float(slack.min()), k, slack, A, B, tol)


@dataclass
class DecayReport:
    passed: bool
    beta: float
    T: float
    z0: float
    zT: float
    bound: float
    observed_rate: float
    lambda_min: float

    def check(self, asserted=True) -> CheckReport:
        return CheckReport("decay", self.passed or not asserted, {
            "beta": self.beta, "T": self.T, "normZ2_0": self.z0, "normZ2_T": self.zT,
            "bound": self.bound, "observed_rate": self.observed_rate, "lambda_min": self.lambda_min,
        }, asserted=asserted)


def decay_check(stats: TrajectoryStats, pp: PhysicalParams | None = None, grid: Grid | None = None,
                slack: float = 0.1, atol: float = 1e-24) -> DecayReport:
    """``|Z(T)|^2 <= exp(-beta T) |Z(0)|^2 (1 + slack)`` with
    ``beta = lambda_min * min(eta, kappa, nu)``.

    ``lambda_min`` is the smallest of the discrete eigenvalues of the solute
    (mean-free), temperature and velocity operators, i.e. the inverse of the
    discrete Poincare constant.  ``atol`` absorbs the round-off left in
    the mean-free part of a constant field.
    """
    meta = stats.meta
    if grid is not None:
        eig = poincare_eigenvalues(grid)
        lam = min(eig.values())
    else:
        lam = min(meta["lambda_c"], meta["lambda_theta"], meta["lambda_u"], meta["lambda_v"])
    eta = pp.eta if pp else meta["eta"]
    kappa = pp.kappa if pp else meta["kappa"]
    nu = pp.nu if pp else meta["nu"]
    beta = lam * min(eta, kappa, nu)
    z = stats.col("normZ2")
    T = float(stats.t[-1] - stats.t[0])
    bound = math.exp(-beta * T) * z[0] * (1.0 + slack)
    rate = -math.log(z[-1] / z[0]) / T if z[0] > 0 and z[-1] > 0 and T > 0 else math.inf
    return DecayReport(bool(z[-1] <= bound + atol), beta, T, float(z[0]), float(z[-1]), bound, rate, lam)


def solid_velocity_integral(stats: TrajectoryStats) -> float:
    """Right-endpoint quadrature of ``int ||v||^2_{L2(K)} dt``."""
    if stats.meta.get("K_cells", -1) == 0:
        raise EmptySolidRegion("the solid region K has no cells")
    v = stats.col("solid_v2")
    return float(np.sum(np.diff(stats.t) * v[1:]))


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    points: int
    defined: bool
    monotone: bool
    message: str = ""


def scaling_fit(eps, integrals) -> ScalingFit:
    """Least-squares slope of log(integral) against log(eps).

    Non-finite or non-positive entries are dropped; fewer than two usable
    points leaves the fit undefined.  ``monotone`` asks whether the
    integrals are nonincreasing in the order given.
    """
    eps = np.asarray(eps, dtype=float)
    vals = np.asarray(integrals, dtype=float)
    ok = np.isfinite(vals) & (vals > 0) & np.isfinite(eps) & (eps > 0)
    fin = vals[np.isfinite(vals)]
    monotone = bool(np.all(np.diff(fin) <= 0))
    if ok.sum() < 2:
        return ScalingFit(math.nan, math.nan, int(ok.sum()), False, monotone,
                          "fewer than two usable points; slope undefined")
    slope, intercept = np.polyfit(np.log(eps[ok]), np.log(vals[ok]), 1)
    return ScalingFit(float(slope), float(intercept), int(ok.sum()), True, monotone)
