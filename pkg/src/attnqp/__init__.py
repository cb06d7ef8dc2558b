"""Classical first-order QP solvers and linear-attention machines that emulate them."""
from . import kernels
from .qp_core import (
    ConvergenceError,
    QpInstance,
    QpValidationError,
    SolverTrace,
    StepSizeError,
    StepSizes,
    Variant,
    default_steps,
    evaluate_objective,
    evaluate_residual,
    power_lipschitz,
)

__version__ = "0.1.0"
BACKEND = kernels.BACKEND

__all__ = [
    "BACKEND",
    "ConvergenceError",
    "QpInstance",
    "QpValidationError",
    "SolverTrace",
    "StepSizeError",
    "StepSizes",
    "Variant",
    "default_steps",
    "evaluate_objective",
    "evaluate_residual",
    "power_lipschitz",
]
