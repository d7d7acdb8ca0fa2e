"""Simulation of discrete- and continuous-state interacting multitype
branching processes: exact event engines, time-change solvers, a
jump-diffusion integrator, the frozen-competition grid approximation, and a
scaling-limit verification harness with brute-force oracles."""

__version__ = "0.1.0"

from .model import (
    ContinuousModelSpec,
    DiracJump,
    DiscreteModelSpec,
    FinitePMF,
    GammaJump,
    JumpComponent,
    JumpMeasureSpec,
    SmallJumpTruncation,
    SpecValidationError,
    derive_mean_matrix,
    mean_flow,
    validate_continuous,
    validate_discrete,
)
from .paths import ContinuousPath, EventLog, Path

__all__ = [
    "ContinuousModelSpec",
    "ContinuousPath",
    "DiracJump",
    "DiscreteModelSpec",
    "EventLog",
    "FinitePMF",
    "GammaJump",
    "JumpComponent",
    "JumpMeasureSpec",
    "Path",
    "SmallJumpTruncation",
    "SpecValidationError",
    "derive_mean_matrix",
    "mean_flow",
    "validate_continuous",
    "validate_discrete",
]
