"""QP problem instances, step sizes, traces, and objective/residual evaluation.

Four problem classes share one container:

* ``U``  -- ``min 1/2 x'Ax + b'x``
* ``LC`` -- same objective subject to ``Cx <= d``
* ``R``  -- same objective plus ``l1_weight * ||x||_1``
* ``C``  -- same objective subject to ``||x||_1 <= l1_budget``
"""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

__all__ = [
    "Variant",
    "QpInstance",
    "StepSizes",
    "SolverTrace",
    "QpValidationError",
    "StepSizeError",
    "ConvergenceError",
    "evaluate_objective",
    "evaluate_residual",
    "power_lipschitz",
    "operator_norm",
    "default_steps",
    "load_instances",
    "dump_instances",
]

SYM_TOL = 1e-12
POWER_RTOL = 1e-10
POWER_MAX_ITERS = 500_000
FEAS_STEPS = 10_000
FEAS_TOL = 1e-8


class QpValidationError(ValueError):
    """Raised when problem data or arguments violate an invariant."""


class StepSizeError(QpValidationError):
    pass


class ConvergenceError(RuntimeError):
    """An iterative routine hit its iteration cap.

    ``estimate`` carries the last value computed before giving up.
    """

    def __init__(self, message: str, estimate: Any = None):
        super().__init__(message)
        self.estimate = estimate


class Variant(str, enum.Enum):
    UNCONSTRAINED = "U"
    LINEARLY_CONSTRAINED = "LC"
    L1_REGULARIZED = "R"
    L1_CONSTRAINED = "C"

    @classmethod
    def parse(cls, value: "Variant | str") -> "Variant":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise QpValidationError(f"unknown variant {value!r}; expected one of U, LC, R, C") from None


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, order="C", copy=True)
    arr.setflags(write=False)
    return arr


def _is_spd(a: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return False
    return True


def _check_vec(v: np.ndarray, n: int, name: str = "x") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (n,):
        raise QpValidationError(f"{name} has shape {v.shape}, expected ({n},)")
    return v


@dataclass(frozen=True, eq=False)
class QpInstance:
    """One convex QP. Arrays are copied, symmetrized (``A``), and made read-only."""

    variant: Variant
    a_matrix: np.ndarray
    b_vec: np.ndarray
    c_matrix: np.ndarray | None = None
    d_vec: np.ndarray | None = None
    l1_weight: float | None = None
    l1_budget: float | None = None
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        variant = Variant.parse(self.variant)
        object.__setattr__(self, "variant", variant)

        a = np.asarray(self.a_matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise QpValidationError(f"A must be a non-empty square matrix, got shape {a.shape}")
        asym = float(np.max(np.abs(a - a.T)))
        if asym > SYM_TOL * max(1.0, float(np.max(np.abs(a)))):
            raise QpValidationError(f"A is not symmetric (max |A - A'| = {asym:.3e})")
        a = (a + a.T) / 2.0
        if not np.all(np.isfinite(a)) or not _is_spd(a):
            raise QpValidationError("A is not symmetric positive definite")
        n = a.shape[0]
        object.__setattr__(self, "a_matrix", _frozen(a))
        b = _check_vec(self.b_vec, n, "b")
        if not np.all(np.isfinite(b)):
            raise QpValidationError("b has non-finite entries")
        object.__setattr__(self, "b_vec", _frozen(b))

        is_lc = variant is Variant.LINEARLY_CONSTRAINED
        if is_lc:
            if self.c_matrix is None or self.d_vec is None:
                raise QpValidationError("variant LC requires C and d")
            c = np.asarray(self.c_matrix, dtype=np.float64)
            if c.ndim != 2 or c.shape[1] != n or c.shape[0] < 1:
                raise QpValidationError(f"C has shape {c.shape}, expected (m, {n}) with m >= 1")
            d = _check_vec(self.d_vec, c.shape[0], "d")
            if not (np.all(np.isfinite(c)) and np.all(np.isfinite(d))):
                raise QpValidationError("C or d has non-finite entries")
            object.__setattr__(self, "c_matrix", _frozen(c))
            object.__setattr__(self, "d_vec", _frozen(d))
        elif self.c_matrix is not None or self.d_vec is not None:
            raise QpValidationError(f"variant {variant.value} must not carry C or d")

        if variant is Variant.L1_REGULARIZED:
            if self.l1_weight is None or not (self.l1_weight > 0 and math.isfinite(self.l1_weight)):
                raise QpValidationError("variant R requires a positive finite l1_weight")
            object.__setattr__(self, "l1_weight", float(self.l1_weight))
        elif self.l1_weight is not None:
            raise QpValidationError(f"variant {variant.value} must not carry l1_weight")

        if variant is Variant.L1_CONSTRAINED:
            if self.l1_budget is None or not (self.l1_budget > 0 and math.isfinite(self.l1_budget)):
                raise QpValidationError("variant C requires a positive finite l1_budget")
            object.__setattr__(self, "l1_budget", float(self.l1_budget))
        elif self.l1_budget is not None:
            raise QpValidationError(f"variant {variant.value} must not carry l1_budget")

        if is_lc:
            _certify_feasible(self.c_matrix, self.d_vec)

    @property
    def n(self) -> int:
        return self.a_matrix.shape[0]

    @property
    def m(self) -> int:
        return 0 if self.c_matrix is None else self.c_matrix.shape[0]

    @cached_property
    def lipschitz(self) -> float:
        return power_lipschitz(self.a_matrix)

    @cached_property
    def c_opnorm(self) -> float | None:
        return None if self.c_matrix is None else operator_norm(self.c_matrix)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict[str, Any] = {
            "variant": self.variant.value,
            "n": self.n,
            "m": self.m,
            "A": self.a_matrix.tolist(),
            "b": self.b_vec.tolist(),
        }
        if self.c_matrix is not None:
            out["C"] = self.c_matrix.tolist()
            out["d"] = self.d_vec.tolist()
        if self.l1_weight is not None:
            out["l1_weight"] = self.l1_weight
        if self.l1_budget is not None:
            out["l1_budget"] = self.l1_budget
        if self.seed is not None:
            out["seed"] = int(self.seed)
        if self.meta:
            out["meta"] = dict(self.meta)
        return out

    def to_json(self) -> str:
        # float repr is the shortest round-trippable decimal, so loads() is bit-exact
        return json.dumps(self.to_dict(), allow_nan=False)

    @classmethod
    def from_dict(cls, data: dict) -> "QpInstance":
        try:
            variant = Variant.parse(data["variant"])
            a = np.asarray(data["A"], dtype=np.float64)
            b = np.asarray(data["b"], dtype=np.float64)
        except KeyError as exc:
            raise QpValidationError(f"instance is missing field {exc.args[0]!r}") from None
        inst = cls(
            variant=variant,
            a_matrix=a,
            b_vec=b,
            c_matrix=data.get("C"),
            d_vec=data.get("d"),
            l1_weight=data.get("l1_weight"),
            l1_budget=data.get("l1_budget"),
            seed=data.get("seed"),
            meta=dict(data.get("meta") or {}),
        )
        if "n" in data and int(data["n"]) != inst.n:
            raise QpValidationError(f"declared n={data['n']} but A is {inst.n}x{inst.n}")
        if "m" in data and int(data["m"]) != inst.m:
            raise QpValidationError(f"declared m={data['m']} but C has {inst.m} rows")
        return inst

    @classmethod
    def from_json(cls, text: str) -> "QpInstance":
        return cls.from_dict(json.loads(text))


def _certify_feasible(c: np.ndarray, d: np.ndarray) -> None:
    """Reject ``{x : Cx <= d}`` unless gradient descent on ``1/2 ||[Cx - d]_+||^2`` reaches zero violation."""
    x = np.zeros(c.shape[1])
    viol = np.maximum(c @ x - d, 0.0)
    if np.max(viol) <= FEAS_TOL:
        return
    step = 1.0 / operator_norm(c) ** 2
    for _ in range(FEAS_STEPS):
        x -= step * (c.T @ viol)
        viol = np.maximum(c @ x - d, 0.0)
        if np.max(viol) <= FEAS_TOL:
            return
    raise QpValidationError(
        f"feasible set {{x : Cx <= d}} could not be certified nonempty "
        f"(residual violation {np.max(viol):.3e} after {FEAS_STEPS} steps)"
    )


def load_instances(path: str | Path) -> list[QpInstance]:
    """Read a newline-delimited JSON dataset."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(QpInstance.from_json(line))
            except (json.JSONDecodeError, QpValidationError) as exc:
                raise QpValidationError(f"{path}:{lineno}: {exc}") from exc
    return out


def dump_instances(instances: Iterable[QpInstance], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(inst.to_json())
            fh.write("\n")


# -- spectral helpers ---------------------------------------------------------


def power_lipschitz(a_matrix: np.ndarray, *, rtol: float = POWER_RTOL, max_iters: int = POWER_MAX_ITERS, seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD matrix by power iteration.

    Iterates on ``A - sigma I`` where ``sigma = max(0, g)`` and ``g`` is the
    Gershgorin lower bound on the spectrum. The shift keeps the matrix PSD and
    the top eigenvector unchanged, and it speeds up clustered spectra whose
    plain ratio ``lambda_2 / lambda_max`` is close to one.

    Stops once the eigen-residual ``||Av - mu v||`` falls below ``rtol * mu``;
    for a symmetric matrix the Rayleigh quotient error is then of order
    ``(rtol * mu)**2 / gap``.

    Raises
    ------
    ConvergenceError
        If ``max_iters`` is reached; ``estimate`` holds the last Rayleigh quotient.
    """
    a = np.asarray(a_matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise QpValidationError(f"expected a square matrix, got shape {a.shape}")
    diag = np.diag(a)
    sigma = max(0.0, float(np.min(2.0 * diag - np.abs(a).sum(axis=1)))) if a.size else 0.0
    shifted = a - sigma * np.eye(a.shape[0])
    v = np.random.default_rng(seed).standard_normal(a.shape[0])
    v /= np.linalg.norm(v)
    mu = sigma
    for _ in range(max_iters):
        w = shifted @ v
        if not np.any(w):
            return sigma
        mu = float(v @ w) + sigma
        resid = np.linalg.norm(w - (mu - sigma) * v)
        if resid <= rtol * abs(mu):
            return mu
        v = w / np.linalg.norm(w)
    raise ConvergenceError(f"power iteration did not converge in {max_iters} iterations", estimate=mu)


def operator_norm(c_matrix: np.ndarray, **kwargs) -> float:
    """Spectral norm ``||C||_2`` as the square root of the top eigenvalue of ``C'C``."""
    c = np.asarray(c_matrix, dtype=np.float64)
    return math.sqrt(power_lipschitz(c.T @ c, **kwargs))


# -- step sizes ---------------------------------------------------------------


@dataclass(frozen=True)
class StepSizes:
    """Primal step ``gamma``, dual / threshold-loop step ``eta`` and the constants they are checked against."""

    gamma: float
    eta: float
    lipschitz: float
    c_opnorm: float | None = None

    def validate(self, variant: Variant | str, n: int | None = None) -> None:
        variant = Variant.parse(variant)
        g, L = self.gamma, self.lipschitz
        if not (L > 0 and math.isfinite(L)):
            raise StepSizeError(f"lipschitz constant must be positive, got {L}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise StepSizeError(f"step size violates eta>0 (eta={self.eta})")
        if variant in (Variant.UNCONSTRAINED, Variant.LINEARLY_CONSTRAINED):
            if not (0 < g < 2.0 / L):
                raise StepSizeError(f"step size violates 0<γ<2/L (γ={g}, L={L})")
        elif not (0 < g <= 1.0 / L):
            raise StepSizeError(f"step size violates 0<γ≤1/L (γ={g}, L={L})")
        if variant is Variant.LINEARLY_CONSTRAINED:
            if self.c_opnorm is None:
                raise StepSizeError("variant LC needs c_opnorm")
            if not self.eta * g * self.c_opnorm**2 < 1.0:
                raise StepSizeError(f"step size violates ηγ‖C‖²<1 (η={self.eta}, γ={g}, ‖C‖={self.c_opnorm})")
        if variant is Variant.L1_CONSTRAINED and n is not None and self.eta > 1.0 / n:
            raise StepSizeError(f"step size violates 0<η≤1/n (η={self.eta}, n={n})")


def default_steps(inst: QpInstance, *, gamma: float | None = None, eta: float | None = None) -> StepSizes:
    """``gamma = 1/L`` and either ``eta = 0.5 / (gamma ||C||^2)`` (LC) or ``eta = 1/n``."""
    L = inst.lipschitz
    g = 1.0 / L if gamma is None else float(gamma)
    if inst.variant is Variant.LINEARLY_CONSTRAINED:
        cn = inst.c_opnorm
        e = 0.5 / (g * cn * cn) if eta is None else float(eta)
        return StepSizes(gamma=g, eta=e, lipschitz=L, c_opnorm=cn)
    e = 1.0 / inst.n if eta is None else float(eta)
    return StepSizes(gamma=g, eta=e, lipschitz=L, c_opnorm=inst.c_opnorm)


# -- evaluation ---------------------------------------------------------------


def evaluate_objective(inst: QpInstance, x: np.ndarray) -> float:
    """Smooth part ``1/2 x'Ax + b'x``, plus the l1 penalty for variant R."""
    x = _check_vec(x, inst.n)
    val = 0.5 * float(x @ (inst.a_matrix @ x)) + float(inst.b_vec @ x)
    if inst.variant is Variant.L1_REGULARIZED:
        val += inst.l1_weight * float(np.sum(np.abs(x)))
    return val


def _soft(y: np.ndarray, theta: float) -> np.ndarray:
    return np.sign(y) * np.maximum(np.abs(y) - theta, 0.0)


def _proj_l1(y: np.ndarray, budget: float) -> np.ndarray:
    # local copy so qp_core stays free of solver imports; solvers.project_l1_ball_sort is the public one
    u = np.abs(y)
    if u.sum() <= budget:
        return y.copy()
    s = np.sort(u)[::-1]
    css = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    rho = np.nonzero(s * k > css - budget)[0][-1]
    theta = (css[rho] - budget) / (rho + 1.0)
    return _soft(y, theta)


def evaluate_residual(inst: QpInstance, x: np.ndarray, lam: np.ndarray | None = None) -> float:
    """Class-specific optimality residual (sup norm); zero exactly at solutions.

    ``U``: ``||Ax + b||``. ``R`` / ``C``: distance moved by one prox / projected
    gradient step with ``gamma = 1/L``. ``LC``: the largest of stationarity,
    primal violation, dual negativity, and complementarity.
    """
    x = _check_vec(x, inst.n)
    v = inst.variant
    if (lam is not None) != (v is Variant.LINEARLY_CONSTRAINED):
        raise QpValidationError("lam must be given exactly when the variant is LC")
    grad = inst.a_matrix @ x + inst.b_vec
    if v is Variant.UNCONSTRAINED:
        return float(np.max(np.abs(grad)))
    if v is Variant.L1_REGULARIZED:
        g = 1.0 / inst.lipschitz
        return float(np.max(np.abs(x - _soft(x - g * grad, g * inst.l1_weight))))
    if v is Variant.L1_CONSTRAINED:
        g = 1.0 / inst.lipschitz
        return float(np.max(np.abs(x - _proj_l1(x - g * grad, inst.l1_budget))))
    lam = _check_vec(lam, inst.m, "lam")
    slack = inst.c_matrix @ x - inst.d_vec
    return float(
        max(
            np.max(np.abs(grad + inst.c_matrix.T @ lam)),
            np.max(np.maximum(slack, 0.0)),
            np.max(np.maximum(-lam, 0.0)),
            np.max(np.abs(lam * slack)),
        )
    )


# -- traces -------------------------------------------------------------------


@dataclass
class SolverTrace:
    """Per-iteration record of a solver or machine run."""

    iterates: list[np.ndarray] = field(default_factory=list)
    duals: list[np.ndarray] | None = None
    objectives: list[float] = field(default_factory=list)
    residuals: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def append(self, x: np.ndarray, objective: float, residual: float, lam: np.ndarray | None = None) -> None:
        self.iterates.append(np.array(x, dtype=np.float64))
        self.objectives.append(float(objective))
        self.residuals.append(float(residual))
        if lam is not None:
            if self.duals is None:
                self.duals = []
            self.duals.append(np.array(lam, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.iterates)

    @property
    def x(self) -> np.ndarray:
        return self.iterates[-1]

    @property
    def lam(self) -> np.ndarray | None:
        return None if not self.duals else self.duals[-1]

    def check(self) -> None:
        """Assert the equal-length and finiteness invariants."""
        k = len(self.iterates)
        if len(self.objectives) != k or len(self.residuals) != k or (self.duals is not None and len(self.duals) != k):
            raise QpValidationError("trace sequences have unequal lengths")
        arrays: Sequence = self.iterates + (self.duals or [])
        if not (all(np.all(np.isfinite(a)) for a in arrays) and np.all(np.isfinite(self.objectives)) and np.all(np.isfinite(self.residuals))):
            raise QpValidationError("trace contains non-finite values")

    def csv_rows(self, impl: str | None = None, first_iter: int = 0) -> tuple[list[str], list[list]]:
        n = self.iterates[0].size if self.iterates else 0
        m = self.duals[0].size if self.duals else 0
        header = (["impl"] if impl else []) + ["iter", "objective", "residual"]
        header += [f"x_{i}" for i in range(n)] + [f"lam_{i}" for i in range(m)]
        rows = []
        for k, x in enumerate(self.iterates):
            row = ([impl] if impl else []) + [first_iter + k, repr(self.objectives[k]), repr(self.residuals[k])]
            row += [repr(float(v)) for v in x]
            if m:
                row += [repr(float(v)) for v in self.duals[k]]
            rows.append(row)
        return header, rows

    def to_csv(self, path: str | Path, impl: str | None = None) -> None:
        header, rows = self.csv_rows(impl)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
