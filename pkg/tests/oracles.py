"""Independent reference computations used across the test suite."""
import itertools

import numpy as np


def active_set_qp(a, b, c, d, tol=1e-9):
    """Solve min 1/2 x'Ax + b'x s.t. Cx <= d by enumerating active sets (small m only)."""
    n, m = a.shape[0], c.shape[0]
    best = None
    for k in range(m + 1):
        for active in itertools.combinations(range(m), k):
            idx = list(active)
            cs = c[idx]
            kkt = np.block([[a, cs.T], [cs, np.zeros((k, k))]])
            rhs = np.concatenate([-b, d[idx]])
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                continue
            x, lam_s = sol[:n], sol[n:]
            if np.any(lam_s < -tol) or np.any(c @ x - d > tol):
                continue
            lam = np.zeros(m)
            lam[idx] = lam_s
            f = 0.5 * x @ a @ x + b @ x
            if best is None or f < best[2]:
                best = (x, lam, f)
    if best is None:
        raise ValueError("no KKT point found")
    return best[0], best[1]


def bisection_l1_projection(y, budget, iters=200):
    """Projection onto the l1 ball via bisection on g(theta) = ||S_theta(y)||_1 - B."""
    y = np.asarray(y, dtype=np.float64)
    if np.abs(y).sum() <= budget:
        return y.copy(), 0.0
    lo, hi = 0.0, float(np.max(np.abs(y)))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if np.maximum(np.abs(y) - mid, 0.0).sum() > budget:
            lo = mid
        else:
            hi = mid
    theta = 0.5 * (lo + hi)
    return np.sign(y) * np.maximum(np.abs(y) - theta, 0.0), theta
