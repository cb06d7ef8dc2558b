"""Classical first-order methods for the four QP classes.

These are the ground truth the attention machines are checked against:
gradient descent (U), Arrow-Hurwicz primal-dual (LC), ISTA (R) and
projected gradient descent onto the l1 ball (C).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .qp_core import (
    QpInstance,
    QpValidationError,
    SolverTrace,
    StepSizes,
    Variant,
    default_steps,
    evaluate_objective,
    evaluate_residual,
)

__all__ = [
    "SolveConfig",
    "gd_step",
    "arrow_hurwicz_step",
    "soft_threshold",
    "ista_step",
    "project_l1_ball_sort",
    "pgd_step",
    "step",
    "run",
]

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITERS = 100_000


@dataclass
class SolveConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    tol: float = DEFAULT_TOL
    x0: np.ndarray | None = None
    lam0: np.ndarray | None = None
    record_trace: bool = True

    def initial(self, inst: QpInstance) -> tuple[np.ndarray, np.ndarray | None]:
        """Starting point, zeros unless given."""
        if self.max_iters < 0:
            raise QpValidationError("max_iters must be non-negative")
        if not self.tol >= 0:
            raise QpValidationError("tol must be non-negative")
        x = np.zeros(inst.n) if self.x0 is None else np.array(self.x0, dtype=np.float64)
        if x.shape != (inst.n,):
            raise QpValidationError(f"x0 has shape {x.shape}, expected ({inst.n},)")
        if inst.variant is not Variant.LINEARLY_CONSTRAINED:
            if self.lam0 is not None:
                raise QpValidationError("lam0 is only meaningful for variant LC")
            return x, None
        lam = np.zeros(inst.m) if self.lam0 is None else np.array(self.lam0, dtype=np.float64)
        if lam.shape != (inst.m,):
            raise QpValidationError(f"lam0 has shape {lam.shape}, expected ({inst.m},)")
        if np.any(lam < 0):
            raise QpValidationError("lam0 must be elementwise non-negative")
        return x, lam


def _require(inst: QpInstance, variant: Variant) -> None:
    if inst.variant is not variant:
        raise QpValidationError(f"expected a {variant.value} instance, got {inst.variant.value}")


def _vec(x, n, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise QpValidationError(f"{name} has shape {x.shape}, expected ({n},)")
    return x


def gd_step(inst: QpInstance, steps: StepSizes, x: np.ndarray) -> np.ndarray:
    """``x - gamma (Ax + b)``."""
    _require(inst, Variant.UNCONSTRAINED)
    x = _vec(x, inst.n)
    return x - steps.gamma * (inst.a_matrix @ x + inst.b_vec)


def arrow_hurwicz_step(inst: QpInstance, steps: StepSizes, x: np.ndarray, lam: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One projected primal-dual step; the dual update sees the new primal iterate."""
    _require(inst, Variant.LINEARLY_CONSTRAINED)
    x = _vec(x, inst.n)
    lam = _vec(lam, inst.m, "lam")
    c = inst.c_matrix
    x_new = x - steps.gamma * (inst.a_matrix @ x + inst.b_vec + c.T @ lam)
    lam_new = np.maximum(lam + steps.eta * (c @ x_new - inst.d_vec), 0.0)
    return x_new, lam_new


def soft_threshold(y: np.ndarray, theta: float) -> np.ndarray:
    """``sign(y) * max(|y| - theta, 0)`` elementwise."""
    if theta < 0:
        raise QpValidationError(f"threshold must be non-negative, got {theta}")
    y = np.asarray(y, dtype=np.float64)
    return np.sign(y) * np.maximum(np.abs(y) - theta, 0.0)


def ista_step(inst: QpInstance, steps: StepSizes, x: np.ndarray) -> np.ndarray:
    _require(inst, Variant.L1_REGULARIZED)
    x = _vec(x, inst.n)
    y = x - steps.gamma * (inst.a_matrix @ x + inst.b_vec)
    return soft_threshold(y, steps.gamma * inst.l1_weight)


def project_l1_ball_sort(y: np.ndarray, budget: float) -> np.ndarray:
    """Exact Euclidean projection onto ``{x : ||x||_1 <= budget}``.

    Sorts ``|y|`` once and picks the threshold from the sorted prefix sums, so
    the cost is ``O(n log n)``. Points already in the closed ball are returned
    unchanged. The threshold depends only on the sorted values, which makes the
    result independent of how ties are ordered.
    """
    if not budget > 0:
        raise QpValidationError(f"budget must be positive, got {budget}")
    y = np.asarray(y, dtype=np.float64)
    u = np.abs(y)
    if u.sum() <= budget:
        return y.copy()
    s = np.sort(u)[::-1]
    css = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    rho = np.nonzero(s * k > css - budget)[0][-1]
    theta = (css[rho] - budget) / (rho + 1.0)
    return np.sign(y) * np.maximum(u - theta, 0.0)


def pgd_step(inst: QpInstance, steps: StepSizes, x: np.ndarray) -> np.ndarray:
    _require(inst, Variant.L1_CONSTRAINED)
    x = _vec(x, inst.n)
    y = x - steps.gamma * (inst.a_matrix @ x + inst.b_vec)
    return project_l1_ball_sort(y, inst.l1_budget)


def step(inst: QpInstance, steps: StepSizes, x: np.ndarray, lam: np.ndarray | None = None):
    """Dispatch one iteration on the instance's variant; returns ``(x, lam)``."""
    v = inst.variant
    if v is Variant.UNCONSTRAINED:
        return gd_step(inst, steps, x), None
    if v is Variant.LINEARLY_CONSTRAINED:
        return arrow_hurwicz_step(inst, steps, x, lam)
    if v is Variant.L1_REGULARIZED:
        return ista_step(inst, steps, x), None
    return pgd_step(inst, steps, x), None


def run(inst: QpInstance, steps: StepSizes | None = None, cfg: SolveConfig | None = None) -> SolverTrace:
    """Iterate until the residual drops to ``cfg.tol`` or ``cfg.max_iters`` steps were taken.

    The returned trace has ``converged`` set accordingly. ``tol=0`` runs
    exactly ``max_iters`` steps. With ``record_trace=False`` only the final
    iterate is kept.
    """
    steps = default_steps(inst) if steps is None else steps
    cfg = SolveConfig() if cfg is None else cfg
    steps.validate(inst.variant, inst.n)
    x, lam = cfg.initial(inst)
    return iterate(inst, lambda x, lam: step(inst, steps, x, lam), x, lam, cfg)


def iterate(inst: QpInstance, update, x, lam, cfg: SolveConfig) -> SolverTrace:
    """Shared driver: ``update(x, lam) -> (x, lam)`` applied under ``cfg``'s stopping rule."""
    trace = SolverTrace()
    res = evaluate_residual(inst, x, lam)
    if cfg.record_trace:
        trace.append(x, evaluate_objective(inst, x), res, lam)
    k = 0
    fixed = cfg.tol == 0
    while (fixed or res > cfg.tol) and k < cfg.max_iters:
        x, lam = update(x, lam)
        k += 1
        res = evaluate_residual(inst, x, lam)
        if cfg.record_trace:
            trace.append(x, evaluate_objective(inst, x), res, lam)
    if not cfg.record_trace:
        trace.append(x, evaluate_objective(inst, x), res, lam)
    trace.iterations = k
    trace.converged = res <= cfg.tol
    return trace
