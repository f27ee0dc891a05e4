"""Quantum particle under moving point interactions.

Solves the charge Volterra system for n interaction centers on smooth
trajectories, reconstructs the wavefunction in momentum space and
verifies the structural properties of the evolution (norm conservation,
forward/backward adjointness).
"""

__version__ = "0.1.0"

from .initial_data import GaussianPacket, InitialDatum, support_clearance
from .kernels import KernelOptions, abel_coefficient, kernel_C, kernel_D
from .special import (
    branch,
    dB_dtau_diag,
    flipped_branch,
    fresnel_F,
    fresnel_moment2,
    kernel_A,
    kernel_B,
    propagator_U0,
    w_jl,
)
from .trajectories import (
    CircularTrajectory,
    PolynomialTrajectory,
    SplineTrajectory,
    StaticTrajectory,
    TrajectorySet,
    UniformTrajectory,
    make_trajectory,
)

__all__ = [
    "__version__",
    "GaussianPacket",
    "InitialDatum",
    "support_clearance",
    "KernelOptions",
    "abel_coefficient",
    "kernel_C",
    "kernel_D",
    "branch",
    "flipped_branch",
    "fresnel_F",
    "fresnel_moment2",
    "kernel_A",
    "kernel_B",
    "dB_dtau_diag",
    "propagator_U0",
    "w_jl",
    "CircularTrajectory",
    "PolynomialTrajectory",
    "SplineTrajectory",
    "StaticTrajectory",
    "UniformTrajectory",
    "TrajectorySet",
    "make_trajectory",
]
