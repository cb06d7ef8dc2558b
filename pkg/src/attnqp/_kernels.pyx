# cython: language_level=3
# distutils: language = c++
"""Compiled inner loops: attention heads, the soft-threshold FFN, the
threshold loop, the four classical steps, and fused multi-step runners.

Mirrors ``attnqp._fallback`` function for function. Keys are stored
transposed (``keys_t[j, i]`` is coordinate ``j`` of row ``i``'s key) so the
score loop runs as contiguous axpys while every score is still accumulated
in coordinate order. Value accumulation over token rows is compensated
(Kahan); do not build with -ffast-math.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs
from libcpp.algorithm cimport sort

cnp.import_array()

BACKEND = "cython"


cdef inline void _head_core(const double[:, ::1] keys_t, const double[:, ::1] values, const double[::1] q,
                            double[::1] scores, double[::1] comp, double[::1] out) noexcept nogil:
    cdef Py_ssize_t dk = keys_t.shape[0], rows = keys_t.shape[1], dv = values.shape[1]
    cdef Py_ssize_t i, j
    cdef double qj, s, y, t
    for i in range(rows):
        scores[i] = 0.0
    for j in range(dk):
        qj = q[j]
        for i in range(rows):
            scores[i] += keys_t[j, i] * qj
    for j in range(dv):
        out[j] = 0.0
        comp[j] = 0.0
    for i in range(rows):
        s = scores[i]
        if s == 0.0:
            continue
        for j in range(dv):
            y = s * values[i, j] - comp[j]
            t = out[j] + y
            comp[j] = (t - out[j]) - y
            out[j] = t


def head_sum(const double[:, ::1] keys_t, const double[:, ::1] values, const double[::1] q, double[::1] out=None):
    """``sum_i <q, k_i> v_i`` with keys given transposed, accumulated in row order."""
    cdef Py_ssize_t rows = keys_t.shape[1], dv = values.shape[1]
    if values.shape[0] != rows:
        raise ValueError(f"keys have {rows} rows but values have {values.shape[0]}")
    if q.shape[0] != keys_t.shape[0]:
        raise ValueError(f"query width {q.shape[0]} does not match key width {keys_t.shape[0]}")
    if out is None:
        out = np.empty(dv)
    elif out.shape[0] != dv:
        raise ValueError("output buffer has the wrong width")
    cdef double[::1] scores = np.empty(rows)
    cdef double[::1] comp = np.empty(dv)
    _head_core(keys_t, values, q, scores, comp, out)
    return np.asarray(out)


cdef class HeadPlan:
    """Cached keys/values of a selector head plus the gather maps and scratch buffers.

    Calling the plan refreshes the key and value of every dynamic row from the
    token matrix, gathers the query at ``query_row`` and evaluates the head.
    The result is written to (and returned as) ``out``.
    """

    cdef cnp.intp_t[::1] _q_idx, _k_idx, _v_idx, _dyn_rows, _dyn_pos
    cdef double[:, ::1] _keys_t, _values
    cdef double[::1] _q, _scores, _comp, _out
    cdef readonly object keys_t, values, out

    def __init__(self, q_idx, k_idx, v_idx, keys_t, values, dyn_rows, dyn_pos):
        self.keys_t = np.ascontiguousarray(keys_t, dtype=np.float64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.out = np.empty(self.values.shape[1])
        self._keys_t = self.keys_t
        self._values = self.values
        self._q_idx = np.ascontiguousarray(q_idx, dtype=np.intp)
        self._k_idx = np.ascontiguousarray(k_idx, dtype=np.intp)
        self._v_idx = np.ascontiguousarray(v_idx, dtype=np.intp)
        self._dyn_rows = np.ascontiguousarray(dyn_rows, dtype=np.intp)
        self._dyn_pos = np.ascontiguousarray(dyn_pos, dtype=np.intp)
        self._q = np.empty(self._q_idx.shape[0])
        self._scores = np.empty(self.keys_t.shape[1])
        self._comp = np.empty(self.values.shape[1])
        self._out = self.out

    cdef void run(self, double[:, ::1] tokens, Py_ssize_t query_row) noexcept nogil:
        cdef Py_ssize_t a, j, row, pos
        for a in range(self._dyn_rows.shape[0]):
            row = self._dyn_rows[a]
            pos = self._dyn_pos[a]
            for j in range(self._k_idx.shape[0]):
                self._keys_t[j, pos] = tokens[row, self._k_idx[j]]
            for j in range(self._v_idx.shape[0]):
                self._values[pos, j] = tokens[row, self._v_idx[j]]
        for j in range(self._q_idx.shape[0]):
            self._q[j] = tokens[query_row, self._q_idx[j]]
        _head_core(self._keys_t, self._values, self._q, self._scores, self._comp, self._out)

    def __call__(self, double[:, ::1] tokens, Py_ssize_t query_row):
        with nogil:
            self.run(tokens, query_row)
        return self.out


cdef inline double _soft(double y, double theta) noexcept nogil:
    cdef double hp = y - theta, hm = -y - theta
    return (hp if hp > 0.0 else 0.0) - (hm if hm > 0.0 else 0.0)


def soft_threshold_ffn(const double[::1] y, double theta, double[::1] out=None):
    """Two-layer ReLU network ``[I, -I] relu([I; -I] y - theta)``, evaluated per coordinate."""
    cdef Py_ssize_t n = y.shape[0], i
    if out is None:
        out = np.empty(n)
    for i in range(n):
        out[i] = _soft(y[i], theta)
    return np.asarray(out)


cdef double _l1_soft(const double[::1] y, double theta, Py_ssize_t* active) noexcept nogil:
    cdef Py_ssize_t i, n = y.shape[0], cnt = 0
    cdef double v, acc = 0.0, comp = 0.0, yy, t
    for i in range(n):
        v = _soft(y[i], theta)
        if v != 0.0:
            cnt += 1
            yy = fabs(v) - comp
            t = acc + yy
            comp = (t - acc) - yy
            acc = t
    active[0] = cnt
    return acc


cdef bint _loop_core(const double[::1] y, double budget, double eta, long max_inner, double inner_tol,
                     double* theta_out, double* r_out, long* t_out) noexcept nogil:
    cdef double theta = 0.0, r
    cdef long t = 0
    cdef Py_ssize_t active = 0
    cdef bint converged = False
    while True:
        r = _l1_soft(y, theta, &active) - budget
        if r < 0.0:
            r = 0.0
        if r <= inner_tol:
            converged = True
            break
        if t >= max_inner:
            break
        theta = theta + eta * r
        t += 1
    theta_out[0] = theta
    r_out[0] = r
    t_out[0] = t
    return converged


def threshold_loop(const double[::1] y, double budget, double eta, long max_inner, double inner_tol, bint record=False):
    """Run ``theta <- theta + eta * relu(||S_theta(y)||_1 - budget)`` from zero.

    Returns ``(theta, excess, iterations, converged, history)``; ``history`` is
    ``None`` unless ``record`` and otherwise a tuple of arrays
    ``(theta_t, r_t, active_t)`` for every evaluated ``t``.
    """
    cdef double theta = 0.0, r
    cdef long t = 0
    cdef Py_ssize_t active = 0
    cdef bint converged = False
    if not record:
        with nogil:
            converged = _loop_core(y, budget, eta, max_inner, inner_tol, &theta, &r, &t)
        return theta, r, t, converged, None
    hist_theta, hist_r, hist_m = [], [], []
    while True:
        r = _l1_soft(y, theta, &active) - budget
        if r < 0.0:
            r = 0.0
        hist_theta.append(theta)
        hist_r.append(r)
        hist_m.append(active)
        if r <= inner_tol:
            converged = True
            break
        if t >= max_inner:
            break
        theta = theta + eta * r
        t += 1
    history = (np.asarray(hist_theta, dtype=np.float64), np.asarray(hist_r, dtype=np.float64), np.asarray(hist_m, dtype=np.int64))
    return theta, r, t, converged, history


# -- fused machine layers --------------------------------------------------------


def u_layers(double[:, ::1] tokens, HeadPlan plan, Py_ssize_t x_row, Py_ssize_t n, double gamma, long k,
             int prox=0, double theta=0.0, double budget=0.0, double eta=0.0, long max_inner=0, double inner_tol=0.0):
    """Run ``k`` layers of the gradient block on the x-row, each followed by an optional prox.

    ``prox`` is 0 for none, 1 for the soft-threshold FFN at ``theta`` and 2
    for the threshold-loop projection onto the l1 ball of radius ``budget``.
    Returns ``(layers, ok, theta, excess, inner)``; ``ok`` is false when a
    threshold loop hit ``max_inner``, in which case that layer is left
    unfinished with its x-row at the gradient step.
    """
    cdef long layer = 0, t = 0
    cdef Py_ssize_t j
    cdef double th = 0.0, r = 0.0
    cdef bint ok = True
    cdef double[::1] xr = tokens[x_row, :n]
    cdef double[::1] o = plan._out
    with nogil:
        while layer < k:
            plan.run(tokens, x_row)
            for j in range(n):
                xr[j] -= gamma * o[j]
            if prox == 1:
                for j in range(n):
                    xr[j] = _soft(xr[j], theta)
            elif prox == 2:
                ok = _loop_core(xr, budget, eta, max_inner, inner_tol, &th, &r, &t)
                if not ok:
                    break
                for j in range(n):
                    xr[j] = _soft(xr[j], th)
            layer += 1
    return layer, ok, th, r, t


def lc_layers(double[:, ::1] tokens, HeadPlan grad, HeadPlan ct, HeadPlan cd,
              Py_ssize_t x_row, Py_ssize_t lam_row, Py_ssize_t n, Py_ssize_t lam_lo, Py_ssize_t m,
              double gamma, double eta, long k):
    """Run ``k`` Arrow-Hurwicz macro-layers; returns the number run."""
    cdef long layer
    cdef Py_ssize_t j, width = tokens.shape[1]
    cdef double[::1] og = grad._out
    cdef double[::1] oc = ct._out
    cdef double[::1] od = cd._out
    with nogil:
        for layer in range(k):
            grad.run(tokens, x_row)
            ct.run(tokens, lam_row)
            for j in range(n):
                tokens[x_row, j] -= gamma * (og[j] + oc[j])
            cd.run(tokens, x_row)
            for j in range(m):
                tokens[lam_row, lam_lo + j] += eta * od[j]
            for j in range(width):
                if tokens[lam_row, j] < 0.0:
                    tokens[lam_row, j] = 0.0
    return k


# -- classical steps -----------------------------------------------------------


cdef inline void _affine_rows(const double[:, ::1] mat_t, const double[::1] x, double[::1] out) noexcept nogil:
    # out += mat_t' x, as axpys over the contiguous rows of mat_t
    cdef Py_ssize_t j, i, rows = mat_t.shape[0], cols = mat_t.shape[1]
    cdef double xj
    for j in range(rows):
        xj = x[j]
        for i in range(cols):
            out[i] += mat_t[j, i] * xj


cdef inline void _gd(const double[:, ::1] a, const double[::1] b, const double[::1] x, double gamma,
                     double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0]
    for i in range(n):
        out[i] = b[i]
    _affine_rows(a, x, out)
    for i in range(n):
        out[i] = x[i] - gamma * out[i]


cdef inline void _project_l1(double[::1] out, double budget, double[::1] work) noexcept nogil:
    cdef Py_ssize_t i, k = 0, n = out.shape[0]
    cdef double total = 0.0, css = 0.0, theta = 0.0, cand, v, lower
    for i in range(n):
        total += fabs(out[i])
    if total <= budget:
        return
    # theta* >= (||y||_1 - B) / n, so entries at or below that bound never enter the prefix
    lower = (total - budget) / n
    for i in range(n):
        v = fabs(out[i])
        if v > lower:
            work[k] = v
            k += 1
    sort(&work[0], &work[0] + k)
    for i in range(k):
        v = work[k - 1 - i]
        css += v
        cand = (css - budget) / (i + 1.0)
        if v > cand:
            theta = cand
    for i in range(n):
        v = fabs(out[i]) - theta
        if v <= 0.0:
            out[i] = 0.0
        elif out[i] > 0.0:
            out[i] = v
        else:
            out[i] = -v


cdef inline void _ah(const double[:, ::1] a, const double[::1] b, const double[:, ::1] c, const double[:, ::1] c_t,
                     const double[::1] d, const double[::1] x, const double[::1] lam, double gamma, double eta,
                     double[::1] x_out, double[::1] lam_out) noexcept nogil:
    cdef Py_ssize_t i, n = x.shape[0], m = lam.shape[0]
    cdef double v
    for i in range(n):
        x_out[i] = b[i]
    _affine_rows(a, x, x_out)
    _affine_rows(c, lam, x_out)
    for i in range(n):
        x_out[i] = x[i] - gamma * x_out[i]
    for i in range(m):
        lam_out[i] = -d[i]
    _affine_rows(c_t, x_out, lam_out)
    for i in range(m):
        v = lam[i] + eta * lam_out[i]
        lam_out[i] = v if v > 0.0 else 0.0


def gd_step(const double[:, ::1] a, const double[::1] b, const double[::1] x, double gamma, double[::1] out):
    """``out = x - gamma (Ax + b)`` for symmetric ``A``."""
    with nogil:
        _gd(a, b, x, gamma, out)
    return np.asarray(out)


def ista_step(const double[:, ::1] a, const double[::1] b, const double[::1] x, double gamma, double theta, double[::1] out):
    cdef Py_ssize_t i
    with nogil:
        _gd(a, b, x, gamma, out)
        for i in range(x.shape[0]):
            out[i] = _soft(out[i], theta)
    return np.asarray(out)


def pgd_step(const double[:, ::1] a, const double[::1] b, const double[::1] x, double gamma, double budget,
             double[::1] out, double[::1] work):
    """Gradient step then the sort-based l1-ball projection; ``work`` is scratch of length n."""
    with nogil:
        _gd(a, b, x, gamma, out)
        _project_l1(out, budget, work)
    return np.asarray(out)


def ah_step(const double[:, ::1] a, const double[::1] b, const double[:, ::1] c, const double[:, ::1] c_t,
            const double[::1] d, const double[::1] x, const double[::1] lam, double gamma, double eta,
            double[::1] x_out, double[::1] lam_out):
    """Arrow-Hurwicz step; ``c_t`` is ``C'`` stored contiguously."""
    with nogil:
        _ah(a, b, c, c_t, d, x, lam, gamma, eta, x_out, lam_out)
    return np.asarray(x_out), np.asarray(lam_out)


cdef inline void _copy(const double[::1] src, double[::1] dst) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(src.shape[0]):
        dst[i] = src[i]


def classical_run(int kind, const double[:, ::1] a, const double[::1] b, double[::1] x, double gamma, long k,
                  double[::1] work, double[::1] work2, double param=0.0,
                  const double[:, ::1] c=None, const double[:, ::1] c_t=None, const double[::1] d=None,
                  double[::1] lam=None, double eta=0.0, double[::1] lam_work=None):
    """``k`` classical steps in place on ``x`` (and ``lam``).

    ``kind`` is 0 GD, 1 ISTA (``param`` is the threshold), 2 PGD (``param``
    is the budget) or 3 Arrow-Hurwicz. ``work`` and ``work2`` are scratch of
    length n, ``lam_work`` of length m.
    """
    cdef long t
    cdef Py_ssize_t i
    with nogil:
        for t in range(k):
            if kind == 3:
                _ah(a, b, c, c_t, d, x, lam, gamma, eta, work, lam_work)
                _copy(lam_work, lam)
            else:
                _gd(a, b, x, gamma, work)
                if kind == 1:
                    for i in range(x.shape[0]):
                        work[i] = _soft(work[i], param)
                elif kind == 2:
                    _project_l1(work, param, work2)
            _copy(work, x)
    return k
