"""Fixed-weight linear-attention machines that execute first-order QP methods.

Each machine keeps a token matrix whose rows encode problem data (rows of
``A`` and ``C``, ``b``, ``d``) and the current iterate(s). One call to
``layer()`` is one transformer layer; it reproduces one iteration of the
corresponding classical method:

=======  ==========================================  =====================
variant  layer                                       classical counterpart
=======  ==========================================  =====================
U        one head + residual on the x-row            gradient descent
LC       two sequential blocks (three heads) + ReLU  Arrow-Hurwicz
R        U head + soft-threshold FFN                 ISTA
C        U head + FFN inside a scalar threshold loop projected GD
=======  ==========================================  =====================

Attention is linear: ``o = sum_i <q, k_i> v_i`` with no softmax and no
normalization. Data rows never change after construction, so their keys and
values are computed once; only the iterate rows are re-projected per layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .qp_core import (
    ConvergenceError,
    QpInstance,
    QpValidationError,
    SolverTrace,
    StepSizes,
    Variant,
    default_steps,
)
from .solvers import SolveConfig, iterate

__all__ = [
    "LinearAttentionHead",
    "SoftThresholdFfn",
    "ThresholdLoopError",
    "head_apply",
    "attention_terms",
    "u_tokens",
    "lc_tokens",
    "threshold_loop",
    "threshold_loop_history",
    "UMachine",
    "LCMachine",
    "RMachine",
    "CMachine",
    "build_u_machine",
    "build_lc_machine",
    "build_r_machine",
    "build_c_machine",
    "build_machine",
]

INNER_TOL = 1e-12
MAX_INNER = 100_000


class ThresholdLoopError(ConvergenceError):
    def __init__(self, theta: float, excess: float, iterations: int):
        super().__init__(
            f"threshold loop stopped after {iterations} updates with excess {excess:.3e} (theta={theta!r})",
            estimate=theta,
        )
        self.theta = theta
        self.excess = excess
        self.iterations = iterations
        self.theta = theta
        self.excess = excess


def _selector_index(w: np.ndarray) -> np.ndarray | None:
    """Column -> source-row map when every column of ``w`` is a one-hot 0/1 vector."""
    if not np.all((w == 0.0) | (w == 1.0)):
        return None
    ones = w.sum(axis=0)
    if not np.all(ones == 1.0):
        return None
    return np.argmax(w, axis=0)


def _project(z: np.ndarray, w: np.ndarray, idx: np.ndarray | None) -> np.ndarray:
    # a one-hot column picks one entry and adds zeros, so the gather is bit-identical to z @ w
    if idx is not None:
        return z[..., idx]
    return z @ w


@dataclass(frozen=True, eq=False)
class LinearAttentionHead:
    """Query, key and value maps applied to row tokens (``q = z @ w_q``).

    ``source_rows`` restricts which token rows the head attends to; ``None``
    means every row, including the query's own.
    """

    w_q: np.ndarray
    w_k: np.ndarray
    w_v: np.ndarray
    source_rows: np.ndarray | None = None
    _idx: tuple = field(init=False, repr=False)

    def __post_init__(self):
        maps = []
        for name in ("w_q", "w_k", "w_v"):
            w = np.array(getattr(self, name), dtype=np.float64)
            if w.ndim != 2:
                raise QpValidationError(f"{name} must be a matrix")
            w.setflags(write=False)
            object.__setattr__(self, name, w)
            maps.append(w)
        if not (maps[0].shape[0] == maps[1].shape[0] == maps[2].shape[0]):
            raise QpValidationError("W_Q, W_K, W_V must share the token width as input dimension")
        if maps[0].shape[1] != maps[1].shape[1]:
            raise QpValidationError("W_Q and W_K must map to the same width")
        if self.source_rows is not None:
            rows = np.array(self.source_rows, dtype=np.intp)
            rows.setflags(write=False)
            object.__setattr__(self, "source_rows", rows)
        object.__setattr__(self, "_idx", tuple(_selector_index(w) for w in maps))

    @property
    def width(self) -> int:
        return self.w_q.shape[0]

    def query(self, z: np.ndarray) -> np.ndarray:
        return _project(z, self.w_q, self._idx[0])

    def key(self, z: np.ndarray) -> np.ndarray:
        return _project(z, self.w_k, self._idx[1])

    def value(self, z: np.ndarray) -> np.ndarray:
        return _project(z, self.w_v, self._idx[2])

    def rows(self, n_tokens: int) -> np.ndarray:
        return np.arange(n_tokens) if self.source_rows is None else self.source_rows


def _check_tokens(head: LinearAttentionHead, tokens: np.ndarray, query_row: int) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2 or tokens.shape[1] != head.width:
        raise QpValidationError(f"token width {tokens.shape[-1]} does not match head width {head.width}")
    if not -tokens.shape[0] <= query_row < tokens.shape[0]:
        raise QpValidationError(f"query row {query_row} out of range for {tokens.shape[0]} tokens")
    return tokens


def head_apply(head: LinearAttentionHead, tokens: np.ndarray, query_row: int, backend=None) -> np.ndarray:
    """Evaluate ``sum_i <q, k_i> v_i`` at ``tokens[query_row]`` over the head's source rows."""
    backend = kernels.active if backend is None else backend
    tokens = _check_tokens(head, tokens, query_row)
    src = tokens[head.rows(tokens.shape[0])]
    return backend.head_sum(
        np.ascontiguousarray(head.key(src).T),
        np.ascontiguousarray(head.value(src)),
        np.ascontiguousarray(head.query(tokens[query_row])),
    )


def attention_terms(head: LinearAttentionHead, tokens: np.ndarray, query_row: int) -> np.ndarray:
    """Per-source-row contributions ``<q, k_i> v_i`` (one row each), for inspection."""
    tokens = _check_tokens(head, tokens, query_row)
    src = tokens[head.rows(tokens.shape[0])]
    scores = head.key(src) @ head.query(tokens[query_row])
    return scores[:, None] * head.value(src)


class _CachedHead:
    """Keys/values for a head's source rows; only ``dynamic`` rows are recomputed.

    Keys are held transposed (coordinate-major) for the kernels. Selector
    heads are evaluated by the backend's ``HeadPlan`` (exposed as ``plan``).
    """

    def __init__(self, head: LinearAttentionHead, tokens: np.ndarray, dynamic_rows=(), backend=None):
        self.head = head
        self.backend = kernels.active if backend is None else backend
        rows = head.rows(tokens.shape[0])
        src = tokens[rows]
        keys_t = np.ascontiguousarray(head.key(src).T)
        values = np.ascontiguousarray(head.value(src))
        pos = {int(r): i for i, r in enumerate(rows)}
        dyn = [(int(r), pos[int(r)]) for r in dynamic_rows if int(r) in pos]
        self.dyn_rows = np.array([r for r, _ in dyn], dtype=np.intp)
        self.dyn_pos = np.array([p for _, p in dyn], dtype=np.intp)
        self.plan = None
        if all(idx is not None for idx in head._idx):
            q_idx, k_idx, v_idx = head._idx
            self.plan = self.backend.HeadPlan(q_idx, k_idx, v_idx, keys_t, values, self.dyn_rows, self.dyn_pos)
            self.keys_t, self.values, self.out = self.plan.keys_t, self.plan.values, self.plan.out
        else:
            self.keys_t, self.values = keys_t, values
            self.out = np.empty(values.shape[1])

    def __call__(self, tokens: np.ndarray, query_row: int) -> np.ndarray:
        """Refresh dynamic rows from ``tokens`` and evaluate at ``query_row``."""
        if self.plan is not None:
            return self.plan(tokens, query_row)
        h = self.head
        for row, pos in zip(self.dyn_rows, self.dyn_pos):
            self.keys_t[:, pos] = h.key(tokens[row])
            self.values[pos] = h.value(tokens[row])
        q = np.ascontiguousarray(h.query(tokens[query_row]))
        return self.backend.head_sum(self.keys_t, self.values, q, self.out)


# -- token layouts --------------------------------------------------------------


def u_tokens(inst: QpInstance, x: np.ndarray) -> np.ndarray:
    """``(n+2) x (2n+1)`` tokens: rows ``[a_i, e_i, 0]``, ``[0, b, 1]``, ``[x, 0, 1]``."""
    n = inst.n
    z = np.zeros((n + 2, 2 * n + 1))
    z[:n, :n] = inst.a_matrix
    z[:n, n : 2 * n] = np.eye(n)
    z[n, n : 2 * n] = inst.b_vec
    z[n, 2 * n] = 1.0
    z[n + 1, :n] = x
    z[n + 1, 2 * n] = 1.0
    return z


def lc_tokens(inst: QpInstance, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``(n+m+2) x (2n+m+1)`` tokens: ``[a_i, e_i, 0, b_i]``, ``[c_i, 0, e_i, -d_i]``, ``[x, 0, 0, 1]``, ``[0, 0, lam, 1]``."""
    n, m = inst.n, inst.m
    p = 2 * n + m
    z = np.zeros((n + m + 2, p + 1))
    z[:n, :n] = inst.a_matrix
    z[:n, n : 2 * n] = np.eye(n)
    z[:n, p] = inst.b_vec
    z[n : n + m, :n] = inst.c_matrix
    z[n : n + m, 2 * n : p] = np.eye(m)
    z[n : n + m, p] = -inst.d_vec
    z[n + m, :n] = x
    z[n + m, p] = 1.0
    z[n + m + 1, 2 * n : p] = lam
    z[n + m + 1, p] = 1.0
    return z


def _rows(*blocks: np.ndarray) -> np.ndarray:
    return np.vstack(blocks)


def _u_head(n: int) -> LinearAttentionHead:
    width = 2 * n + 1
    content = np.eye(n, width)  # E
    ident = np.eye(n, width, k=n)  # R
    const = np.eye(1, width, k=2 * n)  # S
    wqk = _rows(content, const).T
    return LinearAttentionHead(w_q=wqk, w_k=wqk, w_v=ident.T)


def _lc_heads(n: int, m: int) -> tuple[LinearAttentionHead, LinearAttentionHead, LinearAttentionHead]:
    width = 2 * n + m + 1
    e1 = np.eye(n, width)
    r1 = np.eye(n, width, k=n)
    e2 = np.eye(m, width, k=2 * n)
    r2 = e2.copy()
    s = np.eye(1, width, k=2 * n + m)
    wqk = _rows(e1, s).T
    c_rows = np.arange(n, n + m)
    h_grad = LinearAttentionHead(w_q=wqk, w_k=wqk, w_v=r1.T)
    h_ct = LinearAttentionHead(w_q=e2.T, w_k=r2.T, w_v=e1.T)
    # R2 == E2, so the dual token's value under R2 is lam itself; attend to the C rows only
    h_cd = LinearAttentionHead(w_q=wqk, w_k=wqk, w_v=r2.T, source_rows=c_rows)
    return h_grad, h_ct, h_cd


# -- FFN and threshold loop -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class SoftThresholdFfn:
    """Width-``2n`` ReLU network ``W2 relu(W1 y - theta 1)`` with ``W1 = [I; -I]``, ``W2 = [I, -I]``."""

    w1: np.ndarray
    w2: np.ndarray
    bias_theta: float

    @classmethod
    def build(cls, n: int, theta: float) -> "SoftThresholdFfn":
        if theta < 0:
            raise QpValidationError(f"threshold must be non-negative, got {theta}")
        eye = np.eye(n)
        return cls(w1=np.vstack([eye, -eye]), w2=np.hstack([eye, -eye]), bias_theta=float(theta))

    def __call__(self, y: np.ndarray, backend=None) -> np.ndarray:
        backend = kernels.active if backend is None else backend
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (self.w1.shape[1],):
            raise QpValidationError(f"FFN expects width {self.w1.shape[1]}, got {y.shape}")
        return backend.soft_threshold_ffn(y, self.bias_theta)

    def dense(self, y: np.ndarray) -> np.ndarray:
        """Same map through the explicit weight matrices."""
        h = self.w1 @ np.asarray(y, dtype=np.float64) - self.bias_theta
        return self.w2 @ np.maximum(h, 0.0)


def _loop_args(y, budget, eta):
    y = np.ascontiguousarray(y, dtype=np.float64)
    n = y.size
    if not budget > 0:
        raise QpValidationError(f"budget must be positive, got {budget}")
    eta = 1.0 / n if eta is None else float(eta)
    if not 0 < eta <= 1.0 / n:
        raise QpValidationError(f"threshold-loop step must satisfy 0<η≤1/n (η={eta}, n={n})")
    return y, float(budget), eta


def threshold_loop(
    y: np.ndarray,
    budget: float,
    eta: float | None = None,
    max_inner: int = MAX_INNER,
    inner_tol: float = INNER_TOL,
    backend=None,
) -> tuple[float, np.ndarray]:
    """Scalar ascent ``theta <- theta + eta relu(||S_theta(y)||_1 - budget)`` from ``theta = 0``.

    Stops once the excess is at most ``inner_tol`` and returns
    ``(theta, S_theta(y))``, the Euclidean projection of ``y`` onto the l1
    ball of radius ``budget``.

    Raises
    ------
    ThresholdLoopError
        If ``max_inner`` updates leave the excess above ``inner_tol``.
    """
    backend = kernels.active if backend is None else backend
    y, budget, eta = _loop_args(y, budget, eta)
    theta, r, t, ok, _ = backend.threshold_loop(y, budget, eta, int(max_inner), float(inner_tol), False)
    if not ok:
        raise ThresholdLoopError(theta, r, t)
    return theta, backend.soft_threshold_ffn(y, theta)


def threshold_loop_history(y, budget, eta=None, max_inner=MAX_INNER, inner_tol=INNER_TOL, backend=None) -> dict:
    """Run the loop recording ``theta_t``, excess ``r_t`` and active-set size at every step."""
    backend = kernels.active if backend is None else backend
    y, budget, eta = _loop_args(y, budget, eta)
    theta, r, t, ok, (th, rs, act) = backend.threshold_loop(y, budget, eta, int(max_inner), float(inner_tol), True)
    return {"theta": th, "excess": rs, "active": act, "eta": eta, "converged": bool(ok), "iterations": t}


# -- machines -------------------------------------------------------------------


class _Machine:
    variant: Variant

    def __init__(self, inst: QpInstance, steps: StepSizes | None, backend):
        if inst.variant is not self.variant:
            raise QpValidationError(f"expected a {self.variant.value} instance, got {inst.variant.value}")
        self.inst = inst
        self.steps = default_steps(inst) if steps is None else steps
        self.steps.validate(inst.variant, inst.n)
        self.backend = kernels.active if backend is None else backend
        self.n = inst.n

    @property
    def gamma(self) -> float:
        return self.steps.gamma

    @property
    def lam(self) -> np.ndarray | None:
        return None

    def data_rows(self) -> np.ndarray:
        raise NotImplementedError

    def set_state(self, x, lam=None) -> None:
        raise NotImplementedError

    def layers(self, k: int) -> None:
        """Apply ``k`` layers in one backend call."""
        raise NotImplementedError

    def layer(self) -> None:
        self.layers(1)

    def run(self, cfg: SolveConfig | None = None) -> SolverTrace:
        """Apply layers from ``cfg``'s starting point under the reference stopping rule."""
        cfg = SolveConfig() if cfg is None else cfg
        x, lam = cfg.initial(self.inst)
        self.set_state(x, lam)

        def update(_x, _lam):
            self.layer()
            return self.x, self.lam

        return iterate(self.inst, update, x, lam, cfg)

    def run_layers(self, k: int, x0=None, lam0=None) -> SolverTrace:
        return self.run(SolveConfig(max_iters=k, tol=0.0, x0=x0, lam0=lam0))


class UMachine(_Machine):
    """Gradient-descent machine over the ``(n+2) x (2n+1)`` token matrix."""

    variant = Variant.UNCONSTRAINED

    def __init__(self, inst, steps=None, backend=None, x0=None):
        super().__init__(inst, steps, backend)
        self.x_row = self.n + 1
        self.tokens = u_tokens(inst, np.zeros(self.n) if x0 is None else x0)
        self.head = _u_head(self.n)
        self._attn = _CachedHead(self.head, self.tokens, [self.x_row], self.backend)

    @property
    def x(self) -> np.ndarray:
        return self.tokens[self.x_row, : self.n].copy()

    def data_rows(self) -> np.ndarray:
        return self.tokens[: self.n + 1]

    def set_state(self, x, lam=None) -> None:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n,):
            raise QpValidationError(f"x has shape {x.shape}, expected ({self.n},)")
        self.tokens[self.x_row, : self.n] = x

    def _prox_args(self) -> tuple:
        return ()

    def layers(self, k: int) -> None:
        # attention from the x-row, residual with post-map -gamma I, then the variant's prox
        done, ok, theta, excess, inner = self.backend.u_layers(
            self.tokens, self._attn.plan, self.x_row, self.n, self.steps.gamma, int(k), *self._prox_args()
        )
        if not ok:
            raise ThresholdLoopError(theta, excess, inner)


class RMachine(UMachine):
    """ISTA machine: the U block followed by the soft-threshold FFN on the x-row."""

    variant = Variant.L1_REGULARIZED

    def __init__(self, inst, steps=None, backend=None, x0=None):
        super().__init__(inst, steps, backend, x0)
        self.ffn = SoftThresholdFfn.build(self.n, self.steps.gamma * inst.l1_weight)

    def _prox_args(self) -> tuple:
        return (1, self.ffn.bias_theta)


class CMachine(UMachine):
    """Projected-gradient machine: the U block, then the FFN inside the threshold loop."""

    variant = Variant.L1_CONSTRAINED

    def __init__(self, inst, steps=None, backend=None, x0=None, max_inner=MAX_INNER, inner_tol=INNER_TOL):
        super().__init__(inst, steps, backend, x0)
        self.max_inner = max_inner
        self.inner_tol = inner_tol
        self.loop_eta = self.steps.eta

    def _prox_args(self) -> tuple:
        return (2, 0.0, float(self.inst.l1_budget), self.loop_eta, int(self.max_inner), float(self.inner_tol))


class LCMachine(_Machine):
    """Arrow-Hurwicz machine over the ``(n+m+2) x (2n+m+1)`` token matrix.

    Block one evaluates the ``Ax+b`` head at the x-row and the ``C'lam`` head
    at the dual row and applies ``W_O1 = [-gamma I, -gamma I]`` as a residual
    on the x-row. Block two evaluates the ``Cx-d`` head at the updated x-row,
    scales by ``W_O2 = eta I`` into the dual row and applies a token-wise ReLU.
    """

    variant = Variant.LINEARLY_CONSTRAINED

    def __init__(self, inst, steps=None, backend=None, x0=None, lam0=None):
        super().__init__(inst, steps, backend)
        n, m = inst.n, inst.m
        self.m = m
        self.x_row = n + m
        self.lam_row = n + m + 1
        self.lam_slice = slice(2 * n, 2 * n + m)
        self.tokens = lc_tokens(inst, np.zeros(n) if x0 is None else x0, np.zeros(m) if lam0 is None else lam0)
        self.head_grad, self.head_ct, self.head_cd = _lc_heads(n, m)
        dyn = [self.x_row, self.lam_row]
        self._grad = _CachedHead(self.head_grad, self.tokens, dyn, self.backend)
        self._ct = _CachedHead(self.head_ct, self.tokens, dyn, self.backend)
        self._cd = _CachedHead(self.head_cd, self.tokens, dyn, self.backend)

    @property
    def x(self) -> np.ndarray:
        return self.tokens[self.x_row, : self.n].copy()

    @property
    def lam(self) -> np.ndarray:
        return self.tokens[self.lam_row, self.lam_slice].copy()

    def data_rows(self) -> np.ndarray:
        return self.tokens[: self.n + self.m]

    def set_state(self, x, lam=None) -> None:
        x = np.asarray(x, dtype=np.float64)
        lam = np.zeros(self.m) if lam is None else np.asarray(lam, dtype=np.float64)
        if x.shape != (self.n,) or lam.shape != (self.m,):
            raise QpValidationError("state has the wrong shape")
        if np.any(lam < 0):
            raise QpValidationError("dual state must be non-negative")
        self.tokens[self.x_row, : self.n] = x
        self.tokens[self.lam_row, self.lam_slice] = lam

    def layers(self, k: int) -> None:
        s = self.steps
        self.backend.lc_layers(
            self.tokens, self._grad.plan, self._ct.plan, self._cd.plan,
            self.x_row, self.lam_row, self.n, self.lam_slice.start, self.m, s.gamma, s.eta, int(k),
        )


_BUILDERS = {
    Variant.UNCONSTRAINED: UMachine,
    Variant.LINEARLY_CONSTRAINED: LCMachine,
    Variant.L1_REGULARIZED: RMachine,
    Variant.L1_CONSTRAINED: CMachine,
}


def build_u_machine(inst: QpInstance, steps: StepSizes | None = None, backend=None) -> UMachine:
    return UMachine(inst, steps, backend)


def build_lc_machine(inst: QpInstance, steps: StepSizes | None = None, backend=None) -> LCMachine:
    return LCMachine(inst, steps, backend)


def build_r_machine(inst: QpInstance, steps: StepSizes | None = None, backend=None) -> RMachine:
    return RMachine(inst, steps, backend)


def build_c_machine(inst: QpInstance, steps: StepSizes | None = None, backend=None, **loop_kw) -> CMachine:
    return CMachine(inst, steps, backend, **loop_kw)


def build_machine(inst: QpInstance, steps: StepSizes | None = None, backend=None):
    """Machine for the instance's variant."""
    return _BUILDERS[inst.variant](inst, steps, backend)
