"""Time-T propagation map and the search for reproductive states.

A state X is reproductive when propagating it over one period returns it,
``Phi(X) = X``.  The search is a relaxed Picard iteration on

    X <- (1 - omega) X + omega * lambda * Phi(X)

run along a homotopy schedule of ``lambda`` values ending at 1.  The
``lambda`` scaling acts on deviations only: the solute deviation from its
mean, the temperature deviation from the wall-data lift at t = 0, and the
velocity.  The mean solute is a conserved quantity and the lift carries
the wall data, so neither is scaled.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import EmptySolidRegion, NotConverged, NumericalError
from .field_core import BoundaryData, Grid, State, VectorField, cell_speed2, state_norm2
from .phase_model import PhaseDiagram, PhysicalParams, solid_fraction
from .stepper import StepConfig, step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReproConfig:
    T: float = 1.0
    fp_tol: float = 1e-8
    fp_max_iter: int = 200
    relaxation: float = 1.0
    homotopy_schedule: tuple = (1.0,)
    eps_schedule: tuple = (0.1, 0.03, 0.01, 0.003)

    def __post_init__(self):
        object.__setattr__(self, "homotopy_schedule", tuple(float(x) for x in self.homotopy_schedule))
        object.__setattr__(self, "eps_schedule", tuple(float(x) for x in self.eps_schedule))
        if not self.T > 0:
            raise ValueError("T must be > 0")
        if not self.fp_tol > 0:
            raise ValueError("fp_tol must be > 0")
        if self.fp_max_iter < 1:
            raise ValueError("fp_max_iter must be >= 1")
        if not 0 < self.relaxation <= 1:
            raise ValueError("relaxation must lie in (0, 1]")
        lam = self.homotopy_schedule
        if not lam or any(not 0 < x <= 1 for x in lam) or lam[-1] != 1.0:
            raise ValueError("homotopy_schedule must hold values in (0, 1] and end at 1")
        eps = self.eps_schedule
        if not eps or any(not 0 < x <= 1 for x in eps):
            raise ValueError("eps_schedule values must lie in (0, 1]")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("eps_schedule must be strictly decreasing")


@dataclass
class FixedPointReport:
    iterations: int
    residual_history: list
    converged: bool
    final_state: State
    lam: float = 1.0
    eps: float | None = None
    sub_reports: list = field(default_factory=list)
    message: str = ""

    @property
    def final_residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else math.nan

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "final_residual": self.final_residual,
            "residual_history": list(self.residual_history),
            "lambda": self.lam,
            "eps": self.eps,
            "message": self.message,
            "sub_reports": [r.summary() for r in self.sub_reports],
        }


def raise_if_not_converged(report: FixedPointReport) -> FixedPointReport:
    if not report.converged:
        raise NotConverged(
            f"fixed-point iteration stopped after {report.iterations} iterations "
            f"with residual {report.final_residual:.3e}", report)
    return report


def steps_for(T: float, dt: float) -> tuple[int, float]:
    """Number of steps and the (possibly reduced) step that tiles [0, T]."""
    n = max(1, math.ceil(T / dt - 1e-9))
    return n, T / n


def propagate(x0: State, grid: Grid, pd: PhaseDiagram, pp: PhysicalParams, bc: BoundaryData,
              cfg: StepConfig, T: float, callback: Callable[[State], None] | None = None) -> State:
    """X(T) from X(0) = x0.  ``callback`` sees every state, x0 included."""
    if T < 0:
        raise ValueError("T must be >= 0")
    state = x0.copy()
    if callback is not None:
        callback(state)
    if T == 0:
        return state
    n, dt = steps_for(T, cfg.dt)
    if dt != cfg.dt:
        cfg = StepConfig(**{**cfg.__dict__, "dt": dt})
    for _ in range(n):
        state = step(state, grid, pd, pp, bc, cfg)
        if callback is not None:
            callback(state)
    return state


def scale_deviation(state: State, lam: float, lift0: np.ndarray) -> State:
    if lam == 1.0:
        return state
    cbar = state.c.mean()
    return State(
        cbar + lam * (state.c - cbar),
        lift0 + lam * (state.theta - lift0),
        state.vel * lam,
        state.p * lam,
        state.t,
    )


def _blend(a: State, b: State, omega: float) -> State:
    if omega == 1.0:
        return b.copy()
    w = 1.0 - omega
    return State(w * a.c + omega * b.c, w * a.theta + omega * b.theta,
                 a.vel * w + b.vel * omega, b.p.copy(), b.t)


def find_reproductive(guess: State, grid: Grid, pd: PhaseDiagram, pp: PhysicalParams,
                      bc: BoundaryData, cfg: StepConfig, rcfg: ReproConfig) -> FixedPointReport:
    """Relaxed Picard iteration for ``lambda * Phi(X) = X`` along the homotopy.

    The report is returned whether or not the iteration converged; use
    ``raise_if_not_converged`` to turn a stall into an exception.
    """
    lift0 = bc.lift(grid, 0.0)
    x = guess.copy()
    x.t = 0.0
    subs = []
    total = 0
    for lam in rcfg.homotopy_schedule:
        history = []
        converged = False
        message = ""
        for it in range(rcfg.fp_max_iter):
            try:
                y = propagate(x, grid, pd, pp, bc, cfg, rcfg.T)
            except NumericalError as exc:
                message = f"{type(exc).__name__}: {exc}"
                log.warning("propagation failed at lambda=%g iteration %d: %s", lam, it + 1, message)
                break
            y.t = 0.0
            x_new = _blend(x, scale_deviation(y, lam, lift0), rcfg.relaxation)
            diff = state_norm2(State(x_new.c - x.c, x_new.theta - x.theta, x_new.vel - x.vel, x.p), grid)
            res = math.sqrt(diff) / max(math.sqrt(state_norm2(x, grid)), 1.0)
            history.append(res)
            total += 1
            x = x_new
            log.debug("lambda=%g iter=%d residual=%.3e", lam, it + 1, res)
            if not math.isfinite(res):
                message = "non-finite residual"
                break
            if res <= rcfg.fp_tol:
                converged = True
                break
        subs.append(FixedPointReport(len(history), history, converged, x.copy(), lam=lam,
                                     eps=cfg.eps, message=message))
        if not converged:
            break
    last = subs[-1]
    return FixedPointReport(
        iterations=total,
        residual_history=[r for s in subs for r in s.residual_history],
        converged=last.converged and last.lam == 1.0,
        final_state=x,
        lam=last.lam,
        eps=cfg.eps,
        sub_reports=subs,
        message=last.message,
    )


def solid_mask(state: State, pd: PhaseDiagram) -> np.ndarray:
    return np.asarray(solid_fraction(pd, state.c, state.theta)) == 1.0


def region_speed2(vel: VectorField, mask: np.ndarray, grid: Grid) -> float:
    """||v||^2 over the cells in ``mask`` using cell-centred face averages."""
    return float(cell_speed2(vel)[mask].sum() * grid.cell_area)


def cycle_solid_region(x0: State, grid, pd, pp, bc, cfg: StepConfig, T: float) -> np.ndarray:
    """Cells that stay fully solid over a whole period started from ``x0``."""
    K = np.ones((grid.nx, grid.ny), dtype=bool)

    def cb(s):
        K[...] &= solid_mask(s, pd)

    propagate(x0, grid, pd, pp, bc, cfg, T, callback=cb)
    return K


def solid_velocity_over_cycle(x0: State, K: np.ndarray, grid, pd, pp, bc, cfg: StepConfig,
                              T: float) -> float:
    """Right-endpoint quadrature of ``int_0^T ||v||^2_{L2(K)} dt``.

    The starting state is skipped so that only velocities produced by the
    momentum solve at the current ``eps`` enter.
    """
    if not K.any():
        raise EmptySolidRegion("the solid region K has no cells")
    n, dt = steps_for(T, cfg.dt)
    vals = []
    propagate(x0, grid, pd, pp, bc, cfg, T, callback=lambda s: vals.append(region_speed2(s.vel, K, grid)))
    return float(dt * sum(vals[1:]))


@dataclass
class EpsResult:
    eps: float
    report: FixedPointReport
    solid_velocity_integral: float
    ok: bool
    message: str = ""


def eps_continuation(guess: State, grid: Grid, pd: PhaseDiagram, pp: PhysicalParams,
                     bc: BoundaryData, cfg: StepConfig, rcfg: ReproConfig):
    """Reproductive solutions along ``rcfg.eps_schedule`` with warm starts.

    The solid region K is the set of cells with ``f_s = 1`` at every step of
    the first converged cycle; it is then frozen for the whole sweep.
    Returns ``(results, K)``; failed entries carry ``ok=False`` and a NaN
    integral.
    """
    results = []
    K = None
    x = guess
    for eps in rcfg.eps_schedule:
        ecfg = StepConfig(**{**cfg.__dict__, "eps": eps})
        rep = find_reproductive(x, grid, pd, pp, bc, ecfg, rcfg)
        msg = "" if rep.converged else f"not converged: {rep.message or 'iteration cap'}"
        integral = math.nan
        try:
            if K is None and rep.converged:
                K = cycle_solid_region(rep.final_state, grid, pd, pp, bc, ecfg, rcfg.T)
            if K is not None:
                integral = solid_velocity_over_cycle(rep.final_state, K, grid, pd, pp, bc, ecfg, rcfg.T)
        except (EmptySolidRegion, NumericalError) as exc:
            msg = (msg + "; " if msg else "") + f"{type(exc).__name__}: {exc}"
        results.append(EpsResult(eps, rep, integral, rep.converged and math.isfinite(integral), msg))
        x = rep.final_state
    return results, K
