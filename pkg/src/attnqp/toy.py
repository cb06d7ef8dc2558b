"""Two-asset predict-then-optimize toy model.

A mean gap ``delta ~ N(0, tau2)`` is observed through a noisy signal
``delta_hat | delta ~ N(delta, s2)`` with ``s2 = 2 sigma2 / n``. Three rules map
the signal to a weight on asset one: the oracle (true ``delta``), plug-in
predict-then-optimize (``rho = 1``) and the Bayes-shrunk end-to-end rule.
The second asset's mean is fixed at zero since it cancels in every regret.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ToyConfig",
    "ToyRecord",
    "ToyResult",
    "shrinkage",
    "decide",
    "utility",
    "utility_gap",
    "run_monte_carlo",
    "decision_error_profile",
    "FIGURE_GRID",
]

FIGURE_GRID = (10, 25, 50, 100, 250, 500, 1000)


@dataclass(frozen=True)
class ToyConfig:
    tau2: float = 0.01
    sigma2: float = 0.5
    risk_aversion: float = 0.2
    sample_sizes: tuple[int, ...] = FIGURE_GRID
    trials: int = 100_000
    seed: int = 0
    chunk_size: int = 100_000

    def __post_init__(self):
        object.__setattr__(self, "sample_sizes", tuple(int(n) for n in self.sample_sizes))
        for name in ("tau2", "sigma2", "risk_aversion"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if not self.sample_sizes or min(self.sample_sizes) < 1:
            raise ValueError("sample_sizes must be a non-empty list of positive integers")


@dataclass(frozen=True)
class ToyRecord:
    n: int
    rho: float
    regret_pto: tuple[float, float]
    regret_e2e: tuple[float, float]
    gap: tuple[float, float]


@dataclass(frozen=True)
class ToyResult:
    per_n: list[ToyRecord]
    config: ToyConfig
    meta: dict = field(default_factory=dict)

    CSV_COLUMNS = ("n", "rho", "regret_pto", "regret_pto_se", "regret_e2e", "regret_e2e_se", "gap", "gap_se")

    def csv_rows(self) -> list[list]:
        return [[r.n, r.rho, *r.regret_pto, *r.regret_e2e, *r.gap] for r in self.per_n]


def shrinkage(tau2: float, sigma2: float, n: float) -> float:
    """Bayes attenuation ``tau2 / (tau2 + 2 sigma2 / n)``."""
    if not (tau2 > 0 and sigma2 > 0 and n > 0):
        raise ValueError("tau2, sigma2 and n must be positive")
    return tau2 / (tau2 + 2.0 * sigma2 / n)


def decide(delta_signal, risk_aversion: float, rho: float = 1.0):
    """Weight ``clip(1/2 + rho * delta_signal / (4 lambda), 0, 1)``; vectorizes over the signal."""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"rho must lie in (0, 1], got {rho}")
    w = 0.5 + rho * np.asarray(delta_signal, dtype=np.float64) / (4.0 * risk_aversion)
    w = np.clip(w, 0.0, 1.0)
    return float(w) if w.ndim == 0 else w


def utility(w, delta, risk_aversion: float):
    """Mean-variance utility ``w delta - lambda (w^2 + (1 - w)^2)``."""
    w = np.asarray(w, dtype=np.float64)
    return w * delta - risk_aversion * (w * w + (1.0 - w) ** 2)


def utility_gap(w, w_star, risk_aversion: float):
    """``2 lambda (w - w_star)^2``, the utility shortfall relative to an interior optimum."""
    diff = np.asarray(w, dtype=np.float64) - w_star
    return 2.0 * risk_aversion * diff * diff


def _draws(cfg: ToyConfig, n_index: int, s2: float) -> tuple[np.ndarray, np.ndarray]:
    sd_delta, sd_noise = np.sqrt(cfg.tau2), np.sqrt(s2)
    deltas, signals = [], []
    for chunk, start in enumerate(range(0, cfg.trials, cfg.chunk_size)):
        size = min(cfg.chunk_size, cfg.trials - start)
        rng = np.random.default_rng([cfg.seed, n_index, chunk])
        delta = rng.normal(0.0, sd_delta, size)
        deltas.append(delta)
        signals.append(delta + rng.normal(0.0, sd_noise, size))
    return np.concatenate(deltas), np.concatenate(signals)


def _mean_se(v: np.ndarray) -> tuple[float, float]:
    se = float(np.std(v, ddof=1) / np.sqrt(v.size)) if v.size > 1 else float("nan")
    return float(np.mean(v)), se


def _rules(cfg: ToyConfig, n: int, delta: np.ndarray, signal: np.ndarray):
    lam = cfg.risk_aversion
    rho = shrinkage(cfg.tau2, cfg.sigma2, n)
    w_oracle = decide(delta, lam, 1.0)
    w_pto = decide(signal, lam, 1.0)
    w_e2e = decide(signal, lam, rho)
    return rho, w_oracle, w_pto, w_e2e


def run_monte_carlo(cfg: ToyConfig, return_draws: bool = False):
    """Paired Monte Carlo regrets for every ``n`` in the grid.

    All three rules see the same ``(delta, delta_hat)`` draws. Each ``n`` and
    each chunk of ``chunk_size`` trials draws from its own stream seeded by
    ``(seed, n_index, chunk)``, so the result is fixed by ``(seed, chunk_size)``.
    Standard errors use the sample standard deviation (ddof=1) of the per-draw
    regrets and of their paired differences.

    With ``return_draws`` the per-draw realized utilities are also returned as
    a list of dicts, one per ``n``.
    """
    lam = cfg.risk_aversion
    records, draws = [], []
    for idx, n in enumerate(cfg.sample_sizes):
        s2 = 2.0 * cfg.sigma2 / n
        delta, signal = _draws(cfg, idx, s2)
        rho, w_o, w_p, w_e = _rules(cfg, n, delta, signal)
        u_o, u_p, u_e = (utility(w, delta, lam) for w in (w_o, w_p, w_e))
        reg_p, reg_e = u_o - u_p, u_o - u_e
        records.append(ToyRecord(n, rho, _mean_se(reg_p), _mean_se(reg_e), _mean_se(reg_p - reg_e)))
        if return_draws:
            draws.append({"n": n, "u_oracle": u_o, "u_pto": u_p, "u_e2e": u_e, "w_oracle": w_o})
    meta = {"chunk_size": cfg.chunk_size, "generator": "numpy.random.PCG64", "mu2": 0.0}
    result = ToyResult(records, cfg, meta)
    return (result, draws) if return_draws else result


def decision_error_profile(cfg: ToyConfig, n: int, bins: int = 8, max_signal: float | None = None, n_index: int = 0) -> dict:
    """Mean decision error ``|w - w_oracle|`` of both rules, binned by ``|delta_hat|``.

    Bins span ``[0, max_signal)`` (default: the plug-in rule's clipping knee
    ``2 lambda``) in equal widths; empty bins report ``nan``.
    """
    if max_signal is None:
        max_signal = 2.0 * cfg.risk_aversion
    delta, signal = _draws(cfg, n_index, 2.0 * cfg.sigma2 / n)
    _, w_o, w_p, w_e = _rules(cfg, n, delta, signal)
    edges = np.linspace(0.0, max_signal, bins + 1)
    which = np.digitize(np.abs(signal), edges) - 1
    err_p, err_e = np.abs(w_p - w_o), np.abs(w_e - w_o)
    counts = np.zeros(bins, dtype=np.int64)
    mean_p = np.full(bins, np.nan)
    mean_e = np.full(bins, np.nan)
    for k in range(bins):
        sel = which == k
        counts[k] = int(sel.sum())
        if counts[k]:
            mean_p[k] = err_p[sel].mean()
            mean_e[k] = err_e[sel].mean()
    return {
        "edges": edges,
        "counts": counts,
        "pto": mean_p,
        "e2e": mean_e,
        "pto_global": float(err_p.mean()),
        "e2e_global": float(err_e.mean()),
    }
