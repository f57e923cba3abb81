"""Solver and fixed-point driver for reproductive solutions of a regularised
binary-alloy solidification model."""

from .errors import (
    AlloyFreezeError, CflExceeded, ConfigError, EllipticDiverged, EmptySolidRegion,
    NonFinite, NotConverged, NumericalError,
)
from .field_core import BoundaryData, Grid, State, VectorField
from .phase_model import PhaseDiagram, PhysicalParams, Region
from .repro import FixedPointReport, ReproConfig, eps_continuation, find_reproductive, propagate
from .stepper import StepConfig, step

__version__ = "0.1.0"
