"""Phase-diagram closures for a binary alloy.

Everything here is a pure function of ``(c, theta)`` and the diagram
constants, vectorised over numpy arrays.  Scalars in, scalars out.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Region(enum.IntEnum):
    LIQUID = 0
    MIXTURE = 1
    SOLID = 2
    NEGATIVE_EXT = 3
    POSITIVE_EXT = 4


@dataclass(frozen=True)
class PhaseDiagram:
    """Linearised binary phase diagram.

    The liquidus joins ``(0, theta_F)`` to ``(c_E, theta_E)`` and the solidus
    joins ``(0, theta_F)`` to ``(c_A, theta_E)``.
    """

    theta_F: float
    theta_E: float
    c_E: float
    c_A: float
    curve_kind: str = "linear"

    def __post_init__(self):
        if not self.theta_E < self.theta_F:
            raise ValueError("phase diagram requires theta_E < theta_F")
        if not 0.0 < self.c_A < self.c_E:
            raise ValueError("phase diagram requires 0 < c_A < c_E")
        if self.curve_kind != "linear":
            raise ValueError(f"unsupported curve_kind {self.curve_kind!r}")

    @property
    def span(self) -> float:
        return self.theta_F - self.theta_E


@dataclass(frozen=True)
class PhysicalParams:
    rho: float = 1.0
    nu: float = 0.1
    eta: float = 0.1
    kappa: float = 0.1
    C_p: float = 1.0
    alpha: float = 0.0
    beta: float = 0.0
    g_mag: float = 0.0
    theta_r: float = 0.0
    c_r: float = 0.0
    C_0: float = 1.0
    c_g: float = 0.0

    def __post_init__(self):
        for name in ("rho", "nu", "eta", "kappa"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("C_p", "C_0", "g_mag", "c_g"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def check_compatibility(pp: PhysicalParams, pd: PhaseDiagram, area: float) -> None:
    """Raise ``ValueError`` unless ``0 <= c_g <= c_E * |Omega|``."""
    upper = pd.c_E * area
    if not 0.0 <= pp.c_g <= upper:
        raise ValueError(
            f"c_g = {pp.c_g!r} violates the compatibility relation "
            f"0 <= c_g <= gamma_l(theta_E)*|Omega| = {upper!r}"
        )


def _out(x):
    return x.item() if np.ndim(x) == 0 else x


def liquidus(pd: PhaseDiagram, theta):
    th = np.clip(np.asarray(theta, dtype=float), pd.theta_E, pd.theta_F)
    return _out(pd.c_E * (pd.theta_F - th) / pd.span)


def solidus(pd: PhaseDiagram, theta):
    th = np.clip(np.asarray(theta, dtype=float), pd.theta_E, pd.theta_F)
    return _out(pd.c_A * (pd.theta_F - th) / pd.span)


def liquidus_inv(pd: PhaseDiagram, c):
    cc = np.clip(np.asarray(c, dtype=float), 0.0, pd.c_E)
    return _out(pd.theta_F - cc * pd.span / pd.c_E)


def solidus_inv(pd: PhaseDiagram, c):
    cc = np.clip(np.asarray(c, dtype=float), 0.0, pd.c_A)
    return _out(pd.theta_F - cc * pd.span / pd.c_A)


def _masks(pd, c, theta):
    c = np.asarray(c, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c, theta = np.broadcast_arrays(c, theta)
    th_l = np.asarray(liquidus_inv(pd, c))
    th_s = np.asarray(solidus_inv(pd, c))
    # closure of the three named regions, used to carve out the positive extension
    closed = (
        ((c >= 0) & (c <= pd.c_E) & (theta >= th_l))
        | ((theta >= pd.theta_E) & (theta <= pd.theta_F)
           & (c >= np.asarray(solidus(pd, theta))) & (c <= np.asarray(liquidus(pd, theta))))
        | ((c >= 0) & (c <= pd.c_A) & (theta <= th_s))
    )
    negative = c < 0
    positive = (c > 0) & ~closed
    liquid = (c > 0) & (c < pd.c_E) & (theta > th_l)
    solid = (c > 0) & (c < pd.c_A) & (theta < th_s)
    return c, theta, negative, positive, liquid, solid


def classify(pd: PhaseDiagram, c, theta):
    """Region tag of each ``(c, theta)``.

    Priority: negative extension, positive extension, liquid, solid; every
    remaining point (the curves themselves) is tagged as mixture.
    """
    c, theta, neg, pos, liq, sol = _masks(pd, c, theta)
    tag = np.full(c.shape, int(Region.MIXTURE))
    tag[sol] = Region.SOLID
    tag[liq] = Region.LIQUID
    tag[pos] = Region.POSITIVE_EXT
    tag[neg] = Region.NEGATIVE_EXT
    if tag.ndim == 0:
        return Region(int(tag))
    return tag


def liquid_concentration(pd: PhaseDiagram, c, theta):
    """Extended liquid concentration c_l(c, theta), valued in [0, c_E]."""
    c, theta, neg, pos, liq, sol = _masks(pd, c, theta)
    closed_pos = (c >= pd.c_E) | ((c >= pd.c_A) & (theta <= pd.theta_E))
    out = np.asarray(liquidus(pd, theta), dtype=float).copy()
    out = np.where(sol, liquidus(pd, solidus_inv(pd, c)), out)
    out = np.where(liq, c, out)
    out = np.where(closed_pos & (c > 0), pd.c_E, out)
    out = np.where(c <= 0, 0.0, out)
    return _out(out)


def solid_fraction(pd: PhaseDiagram, c, theta):
    """Lever-rule solid fraction, extended by 1 on the closure of the solid
    and positive regions and by 0 elsewhere."""
    c = np.asarray(c, dtype=float)
    theta = np.asarray(theta, dtype=float)
    c, theta = np.broadcast_arrays(c, theta)
    gl = np.asarray(liquidus(pd, theta))
    gs = np.asarray(solidus(pd, theta))
    one = (
        ((c >= 0) & (c <= pd.c_A) & (theta <= np.asarray(solidus_inv(pd, c))))
        | (c >= pd.c_E)
        | ((c >= pd.c_A) & (theta <= pd.theta_E))
    )
    mixture = (theta > pd.theta_E) & (theta < pd.theta_F) & (c > gs) & (c < gl)
    with np.errstate(invalid="ignore", divide="ignore"):
        lever = np.where(mixture, (gl - c) / np.where(mixture, gl - gs, 1.0), 0.0)
    out = np.where(one, 1.0, np.where(mixture, lever, 0.0))
    return _out(np.clip(out, 0.0, 1.0))


def carman_kozeny(pp: PhysicalParams, fs, eps: float):
    """Regularised Carman-Kozeny drag coefficient C_0 fs^2 / (1 - fs + eps)^3."""
    if not eps > 0:
        raise ValueError("eps must be > 0; the unregularised law is singular at fs = 1")
    fs = np.asarray(fs, dtype=float)
    return _out(pp.C_0 * fs**2 / (1.0 - fs + eps) ** 3)


def buoyancy(pp: PhysicalParams, pd: PhaseDiagram, c, theta):
    """Boussinesq force at cell centres as ``(fx, fy)``; gravity points to -y."""
    cl = np.asarray(liquid_concentration(pd, c, theta))
    scale = pp.rho * (pp.alpha * (np.asarray(theta) - pp.theta_r) + pp.beta * (cl - pp.c_r))
    fy = -pp.g_mag * scale
    return _out(np.zeros_like(fy)), _out(fy)
