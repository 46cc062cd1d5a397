"""Numerical laboratory for anisotropic viscoelastic wave equations with memory.

Simulation, energy and Carleman-type weighted estimates, boundary
observability and the linear inverse source problem on box domains.
"""

from .errors import CarlemanLabError
from .geometry import (
    CarlemanWeight,
    CoefficientField,
    CutoffFunction,
    Domain,
    check_pseudo_convexity,
    make_coefficient_field,
    min_observation_time,
    observation_boundary,
)
from .memory_kernels import MemoryKernel, make_kernel
from .forward_solver import ProblemSpec, SimulationResult, simulate

__all__ = [
    "CarlemanLabError",
    "CarlemanWeight",
    "CoefficientField",
    "CutoffFunction",
    "Domain",
    "MemoryKernel",
    "ProblemSpec",
    "SimulationResult",
    "check_pseudo_convexity",
    "make_coefficient_field",
    "make_kernel",
    "min_observation_time",
    "observation_boundary",
    "simulate",
]

__version__ = "0.1.0"
