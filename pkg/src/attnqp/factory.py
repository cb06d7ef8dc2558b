"""Random QP instances, the condition-number shift generator, tokenization and metrics.

All randomness comes from NumPy's ``PCG64`` bit generator seeded through
``SeedSequence``; every generator here is a pure function of its arguments.
"""
from __future__ import annotations

import numpy as np

from .qp_core import QpInstance, QpValidationError, Variant

__all__ = [
    "GENERATOR",
    "generate_baseline",
    "generate_kappa_shifted",
    "tokenize_sequence",
    "metrics",
    "r2_score",
    "KAPPA_RANGES",
]

GENERATOR = f"numpy.random.PCG64/numpy-{np.__version__}"

# condition-number bands used for the distribution-shift test sets
KAPPA_RANGES = ((1.2, 2.0), (2.0, 5.0), (5.0, 10.0), (10.0, 20.0))

_STREAM_BASE, _STREAM_KAPPA, _STREAM_XINIT = 0, 1, 2


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


def _check_dims(n: int, m: int, variant: Variant) -> None:
    if n < 1:
        raise QpValidationError(f"n must be >= 1, got {n}")
    if variant is Variant.LINEARLY_CONSTRAINED:
        if m < 1:
            raise QpValidationError("variant LC needs m >= 1")
    elif m != 0:
        raise QpValidationError(f"variant {variant.value} takes m = 0, got {m}")


def _finish(variant, a, b, c, d, seed, meta) -> QpInstance:
    l1_weight = l1_budget = None
    if variant is Variant.L1_REGULARIZED:
        l1_weight = 0.1 * float(np.max(np.abs(b)))
    elif variant is Variant.L1_CONSTRAINED:
        l1_budget = 0.5 * float(np.sum(np.abs(np.linalg.solve(a, b))))
    return QpInstance(variant, a, b, c, d, l1_weight=l1_weight, l1_budget=l1_budget, seed=int(seed), meta=meta)


def _baseline_data(n: int, m: int, variant: Variant, seed: int):
    rng = _rng(seed, _STREAM_BASE)
    g = rng.standard_normal((n, n))
    a = g @ g.T + 0.1 * np.eye(n)
    a = (a + a.T) / 2.0
    b = rng.standard_normal(n)
    c = d = None
    if variant is Variant.LINEARLY_CONSTRAINED:
        c = rng.standard_normal((m, n))
        d = rng.uniform(1.0, 2.0, m)
    return a, b, c, d


def generate_baseline(n: int, m: int, variant: Variant | str, seed: int) -> QpInstance:
    """``A = GG' + 0.1 I`` with Gaussian ``G``, ``b``, ``C`` and ``d ~ U[1, 2]``.

    For variant R the l1 weight is ``0.1 ||b||_inf``; for C the budget is half
    the l1 norm of the unconstrained minimizer ``-A^{-1} b``.
    """
    variant = Variant.parse(variant)
    _check_dims(n, m, variant)
    a, b, c, d = _baseline_data(n, m, variant, seed)
    return _finish(variant, a, b, c, d, seed, {"generator": GENERATOR, "family": "baseline"})


def _random_orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def generate_kappa_shifted(
    n: int,
    m: int,
    kappa_range: tuple[float, float],
    seed: int,
    frob_target: float | None = None,
    variant: Variant | str = Variant.LINEARLY_CONSTRAINED,
) -> QpInstance:
    """Instance whose ``A`` has a prescribed condition number.

    ``kappa ~ U[low, high]``; eigenvalues are geometrically spaced from 1 to
    ``kappa`` and rotated by a random orthogonal matrix, then ``A`` is scaled to
    Frobenius norm ``frob_target`` (default: the norm of the baseline ``A``
    for the same seed). ``b``, ``C`` and ``d`` are the baseline draws.
    The drawn ``kappa`` is stored in ``meta["kappa"]``.
    """
    variant = Variant.parse(variant)
    _check_dims(n, m, variant)
    low, high = float(kappa_range[0]), float(kappa_range[1])
    if not 1.0 < low < high:
        raise QpValidationError(f"kappa range must satisfy 1 < low < high, got ({low}, {high})")
    if n < 2:
        raise QpValidationError("a condition-number shift needs n >= 2")
    a_base, b, c, d = _baseline_data(n, m, variant, seed)
    rng = _rng(seed, _STREAM_KAPPA)
    kappa = float(rng.uniform(low, high))
    q = _random_orthogonal(rng, n)
    eig = kappa ** (np.arange(n) / (n - 1.0))
    a = (q * eig) @ q.T
    a = (a + a.T) / 2.0
    target = float(np.linalg.norm(a_base, "fro")) if frob_target is None else float(frob_target)
    if not target > 0:
        raise QpValidationError("frob_target must be positive")
    a *= target / np.linalg.norm(a, "fro")
    meta = {"generator": GENERATOR, "family": "kappa", "kappa": kappa, "kappa_range": [low, high], "frob_target": target}
    return _finish(variant, a, b, c, d, seed, meta)


def tokenize_sequence(inst: QpInstance) -> list[np.ndarray]:
    """``n + m + 3`` tokens in ``R^n``: rows of ``A``, rows of ``C``, ``b``, zero-padded ``d``, ``x_init``.

    ``x_init`` is standard normal, drawn from a stream derived from the
    instance seed (seed 0 when the instance has none).
    """
    if inst.variant is not Variant.LINEARLY_CONSTRAINED:
        raise QpValidationError("tokenization is defined for LC instances")
    n, m = inst.n, inst.m
    if m > n:
        raise QpValidationError(f"cannot embed d (m={m}) in R^n (n={n})")
    pad_d = np.zeros(n)
    pad_d[:m] = inst.d_vec
    x_init = _rng(0 if inst.seed is None else inst.seed, _STREAM_XINIT).standard_normal(n)
    toks = [row.copy() for row in inst.a_matrix] + [row.copy() for row in inst.c_matrix]
    toks += [inst.b_vec.copy(), pad_d, x_init]
    return toks


def metrics(pred: np.ndarray, truth: np.ndarray, truth_mean: np.ndarray) -> tuple[float, float, tuple[float, float]]:
    """Per-instance ``(MSE, NMSE, (sse, sst))``; sum the pairs across a dataset and call :func:`r2_score`."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    truth_mean = np.asarray(truth_mean, dtype=np.float64)
    if not (pred.shape == truth.shape == truth_mean.shape) or pred.ndim != 1:
        raise QpValidationError("pred, truth and truth_mean must be vectors of equal length")
    norm2 = float(truth @ truth)
    if norm2 == 0.0:
        raise QpValidationError("NMSE is undefined for a zero ground-truth solution")
    err = pred - truth
    sse = float(err @ err)
    dev = truth_mean - truth
    return sse / truth.size, sse / norm2, (sse, float(dev @ dev))


def r2_score(contribs) -> float:
    """Dataset-level ``1 - sum(sse) / sum(sst)`` from :func:`metrics` pairs."""
    sse = sum(c[0] for c in contribs)
    sst = sum(c[1] for c in contribs)
    if sst == 0.0:
        raise QpValidationError("R^2 is undefined when all ground-truth solutions are equal")
    return 1.0 - sse / sst
