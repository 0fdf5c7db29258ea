"""Numerical laboratory for the free-time action potential and weak KAM
structures of the Newtonian N-body problem (and its homogeneous-potential
relatives)."""

from .geometry import MassSystem
from .curves import Curve, ActionBreakdown
from .minimize import (
    FreeTimeSolver,
    MinimizeOptions,
    MinimizeResult,
    PhiCache,
    PotentialValue,
)
from .weakkam import SampledField

__all__ = [
    "MassSystem",
    "Curve",
    "ActionBreakdown",
    "FreeTimeSolver",
    "MinimizeOptions",
    "MinimizeResult",
    "PhiCache",
    "PotentialValue",
    "SampledField",
]

__version__ = "0.1.0"
