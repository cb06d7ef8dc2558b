"""Pure NumPy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures, buffers and return conventions. ``head_sum`` accumulates
values with NumPy's pairwise summation instead of a Kahan loop; the two stay
within a few ulps of each other.
"""
import numpy as np

BACKEND = "numpy"


def head_sum(keys_t, values, q, out=None):
    keys_t = np.asarray(keys_t, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if values.shape[0] != keys_t.shape[1]:
        raise ValueError(f"keys have {keys_t.shape[1]} rows but values have {values.shape[0]}")
    if q.shape[0] != keys_t.shape[0]:
        raise ValueError(f"query width {q.shape[0]} does not match key width {keys_t.shape[0]}")
    res = (q @ keys_t) @ values
    if out is None:
        return res
    out[:] = res
    return out


def soft_threshold_ffn(y, theta, out=None):
    y = np.asarray(y, dtype=np.float64)
    res = np.maximum(y - theta, 0.0) - np.maximum(-y - theta, 0.0)
    if out is None:
        return res
    out[:] = res
    return out


def threshold_loop(y, budget, eta, max_inner, inner_tol, record=False):
    y = np.asarray(y, dtype=np.float64)
    absy = np.abs(y)
    theta = 0.0
    t = 0
    converged = False
    hist = ([], [], []) if record else None
    while True:
        x = soft_threshold_ffn(y, theta)
        r = max(float(np.sum(np.abs(x))) - budget, 0.0)
        if record:
            hist[0].append(theta)
            hist[1].append(r)
            hist[2].append(int(np.count_nonzero(absy > theta)))
        if r <= inner_tol:
            converged = True
            break
        if t >= max_inner:
            break
        theta = theta + eta * r
        t += 1
    history = None
    if record:
        history = (np.asarray(hist[0]), np.asarray(hist[1]), np.asarray(hist[2], dtype=np.int64))
    return theta, r, t, converged, history


# classical steps with preallocated outputs, matching the compiled signatures


def gd_step(a, b, x, gamma, out):
    np.dot(a, x, out=out)
    out += b
    out *= -gamma
    out += x
    return out


def ista_step(a, b, x, gamma, theta, out):
    gd_step(a, b, x, gamma, out)
    out[:] = np.sign(out) * np.maximum(np.abs(out) - theta, 0.0)
    return out


def pgd_step(a, b, x, gamma, budget, out, work):
    gd_step(a, b, x, gamma, out)
    np.abs(out, out=work)
    if work.sum() <= budget:
        return out
    s = np.sort(work)[::-1]
    css = np.cumsum(s)
    k = np.arange(1, s.size + 1)
    rho = np.nonzero(s * k > css - budget)[0][-1]
    theta = (css[rho] - budget) / (rho + 1.0)
    out[:] = np.sign(out) * np.maximum(work - theta, 0.0)
    return out


def ah_step(a, b, c, c_t, d, x, lam, gamma, eta, x_out, lam_out):
    np.dot(a, x, out=x_out)
    x_out += b
    x_out += c_t @ lam
    x_out *= -gamma
    x_out += x
    np.dot(c, x_out, out=lam_out)
    lam_out -= d
    lam_out *= eta
    lam_out += lam
    np.maximum(lam_out, 0.0, out=lam_out)
    return x_out, lam_out


class HeadPlan:
    """Cached keys/values of a selector head plus gather maps; see the compiled twin."""

    def __init__(self, q_idx, k_idx, v_idx, keys_t, values, dyn_rows, dyn_pos):
        self.keys_t = np.ascontiguousarray(keys_t, dtype=np.float64)
        self.values = np.ascontiguousarray(values, dtype=np.float64)
        self.out = np.empty(self.values.shape[1])
        self._q_idx = np.asarray(q_idx, dtype=np.intp)
        self._k_idx = np.asarray(k_idx, dtype=np.intp)
        self._v_idx = np.asarray(v_idx, dtype=np.intp)
        self._dyn = list(zip(np.asarray(dyn_rows, dtype=np.intp), np.asarray(dyn_pos, dtype=np.intp)))
        self._scores = np.empty(self.keys_t.shape[1])

    def __call__(self, tokens, query_row):
        for row, pos in self._dyn:
            self.keys_t[:, pos] = tokens[row, self._k_idx]
            self.values[pos] = tokens[row, self._v_idx]
        np.dot(tokens[query_row, self._q_idx], self.keys_t, out=self._scores)
        np.dot(self._scores, self.values, out=self.out)
        return self.out


def u_layers(tokens, plan, x_row, n, gamma, k, prox=0, theta=0.0, budget=0.0, eta=0.0, max_inner=0, inner_tol=0.0):
    xr = tokens[x_row, :n]
    th = r = 0.0
    t = 0
    for layer in range(k):
        xr -= gamma * plan(tokens, x_row)
        if prox == 1:
            xr[:] = soft_threshold_ffn(xr, theta)
        elif prox == 2:
            th, r, t, ok, _ = threshold_loop(xr, budget, eta, max_inner, inner_tol)
            if not ok:
                return layer, False, th, r, t
            xr[:] = soft_threshold_ffn(xr, th)
    return k, True, th, r, t


def lc_layers(tokens, grad, ct, cd, x_row, lam_row, n, lam_lo, m, gamma, eta, k):
    xr = tokens[x_row, :n]
    lr = tokens[lam_row]
    for _ in range(k):
        o_grad = grad(tokens, x_row)
        o_ct = ct(tokens, lam_row)
        xr -= gamma * (o_grad + o_ct)
        lr[lam_lo : lam_lo + m] += eta * cd(tokens, x_row)
        lr[lr < 0.0] = 0.0
    return k


def classical_run(kind, a, b, x, gamma, k, work, work2, param=0.0, c=None, c_t=None, d=None, lam=None, eta=0.0, lam_work=None):
    for _ in range(k):
        if kind == 3:
            ah_step(a, b, c, c_t, d, x, lam, gamma, eta, work, lam_work)
            lam[:] = lam_work
        elif kind == 1:
            ista_step(a, b, x, gamma, param, work)
        elif kind == 2:
            pgd_step(a, b, x, gamma, param, work, work2)
        else:
            gd_step(a, b, x, gamma, work)
        x[:] = work
    return k
