"""Flip-oddness probe for pure-data linear attention.

A linear-attention layer whose tokens are just the data points ``x_i`` computes
``o_j = S_V M' x_j`` with ``S_V = sum_i (V x_i) x_i'`` and ``M = W_Q W_K'``.
Every output is a cubic form in the data, hence odd under ``X -> -X``, so no
linear read-out can produce a flip-invariant statistic like ``sum_i x_i x_i'``.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

__all__ = [
    "pure_data_attention",
    "flip_oddness_check",
    "second_moment",
    "matrix_reducer",
    "even_statistic_gap",
]


def _inputs(x_rows, m_map, v_map):
    x = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    m = np.asarray(m_map, dtype=np.float64)
    v = np.asarray(v_map, dtype=np.float64)
    n = x.shape[1]
    if m.shape != (n, n) or v.shape != (n, n):
        raise ValueError(f"m_map and v_map must be {n}x{n}, got {m.shape} and {v.shape}")
    return x, m, v


def pure_data_attention(x_rows, m_map, v_map) -> np.ndarray:
    """Outputs ``o_j = [sum_i (V x_i) x_i'] M' x_j`` stacked as an ``N x n`` matrix."""
    x, m, v = _inputs(x_rows, m_map, v_map)
    sketch = (x @ v.T).T @ x
    return x @ m @ sketch.T


def flip_oddness_check(x_rows, m_map, v_map) -> float:
    """``max |o(X) + o(-X)|``; zero up to rounding because the layer is odd."""
    x, m, v = _inputs(x_rows, m_map, v_map)
    if x.size == 0:
        return 0.0
    return float(np.max(np.abs(pure_data_attention(x, m, v) + pure_data_attention(-x, m, v))))


def second_moment(x_rows) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    return x.T @ x


def matrix_reducer(weights: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Linear reducer ``vec(R(o)) = weights @ vec(o)`` mapping an ``N x n`` output to ``n x n``."""
    weights = np.asarray(weights, dtype=np.float64)

    def reduce(o: np.ndarray) -> np.ndarray:
        n = o.shape[1]
        if weights.shape != (n * n, o.size):
            raise ValueError(f"reducer weights must be {(n * n, o.size)}, got {weights.shape}")
        return (weights @ o.ravel()).reshape(n, n)

    return reduce


def even_statistic_gap(x_rows, m_map, v_map, target_reducer) -> float:
    """Mean Frobenius error of a linear read-out of the layer against ``sum_i x_i x_i'`` on ``X`` and ``-X``.

    ``target_reducer`` is a callable taking the ``N x n`` output to an
    ``n x n`` matrix, or a weight matrix accepted by :func:`matrix_reducer`.
    For any linear reducer the result is at least ``||sum_i x_i x_i'||_F``.
    """
    x, m, v = _inputs(x_rows, m_map, v_map)
    reduce = target_reducer if callable(target_reducer) else matrix_reducer(target_reducer)
    target = second_moment(x)
    gap_pos = np.linalg.norm(target - reduce(pure_data_attention(x, m, v)), "fro")
    gap_neg = np.linalg.norm(target - reduce(pure_data_attention(-x, m, v)), "fro")
    return 0.5 * float(gap_pos + gap_neg)
