"""Per-step wall time of classical iterations against their attention machines.

Both sides run on the same kernel backend. Each rep times a batch of
consecutive steps (sized once so a batch lasts at least ``min_batch_s``) with
a monotonic clock and divides by the batch length; the reported figure is the
median over reps after warmup.

In ``fused`` mode (the default) a batch is a single backend call that runs
all its steps, so the figure is the cost of the iteration itself. In ``call``
mode every step is its own Python-level call and so also pays a fixed
interpreter overhead per step.
"""
from __future__ import annotations

import math
import platform
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .factory import generate_baseline
from .machine import build_machine
from .qp_core import QpInstance, QpValidationError, StepSizes, Variant, default_steps

__all__ = [
    "BenchRecord",
    "ClassicalStepper",
    "MIN_REPS",
    "MIN_WARMUP",
    "DEFAULT_SIZES",
    "LC_GRID",
    "bench_grid",
    "cpu_model",
    "default_dims",
    "time_steps",
]

MIN_REPS = 30
MIN_WARMUP = 5
DEFAULT_SIZES = (16, 32, 64, 128)
# (n, m) cells timed for LC; sizes outside this grid use m = n // 2
LC_GRID = ((16, 8), (16, 16), (32, 8), (32, 16), (32, 32), (64, 16), (64, 32), (64, 64), (128, 32), (128, 64))


@dataclass(frozen=True)
class BenchRecord:
    variant: str
    n: int
    m: int
    classical_ms: float
    machine_ms: float
    overhead: float
    reps: int
    warmup: int
    backend: str
    batch: int
    mode: str

    def as_dict(self) -> dict:
        return asdict(self)


class ClassicalStepper:
    """Classical iterations on preallocated buffers: one per :meth:`step`, or ``k`` per :meth:`run`."""

    def __init__(self, inst: QpInstance, steps: StepSizes | None = None, backend=None):
        self.inst = inst
        self.steps = default_steps(inst) if steps is None else steps
        self.steps.validate(inst.variant, inst.n)
        self.backend = kernels.active if backend is None else backend
        n = inst.n
        self.a = np.ascontiguousarray(inst.a_matrix)
        self.b = np.ascontiguousarray(inst.b_vec)
        self.x, self.x_next = np.zeros(n), np.empty(n)
        self.work = np.empty(n)
        if inst.variant is Variant.LINEARLY_CONSTRAINED:
            self.c = np.ascontiguousarray(inst.c_matrix)
            self.c_t = np.ascontiguousarray(inst.c_matrix.T)
            self.d = np.ascontiguousarray(inst.d_vec)
            self.lam, self.lam_next = np.zeros(inst.m), np.empty(inst.m)
        self.work2 = np.empty(n)
        self.step = {
            Variant.UNCONSTRAINED: self._gd,
            Variant.LINEARLY_CONSTRAINED: self._ah,
            Variant.L1_REGULARIZED: self._ista,
            Variant.L1_CONSTRAINED: self._pgd,
        }[inst.variant]

    def reset(self) -> None:
        self.x[:] = 0.0
        if self.inst.variant is Variant.LINEARLY_CONSTRAINED:
            self.lam[:] = 0.0

    def run(self, k: int) -> None:
        """``k`` steps in one backend call."""
        g, v = self.steps.gamma, self.inst.variant
        if v is Variant.LINEARLY_CONSTRAINED:
            self.backend.classical_run(
                3, self.a, self.b, self.x, g, k, self.x_next, self.work2,
                c=self.c, c_t=self.c_t, d=self.d, lam=self.lam, eta=self.steps.eta, lam_work=self.lam_next,
            )
            return
        kind, param = {
            Variant.UNCONSTRAINED: (0, 0.0),
            Variant.L1_REGULARIZED: (1, g * (self.inst.l1_weight or 0.0)),
            Variant.L1_CONSTRAINED: (2, self.inst.l1_budget or 0.0),
        }[v]
        self.backend.classical_run(kind, self.a, self.b, self.x, g, k, self.x_next, self.work2, param)

    def _swap(self):
        self.x, self.x_next = self.x_next, self.x

    def _gd(self):
        self.backend.gd_step(self.a, self.b, self.x, self.steps.gamma, self.x_next)
        self._swap()

    def _ista(self):
        g = self.steps.gamma
        self.backend.ista_step(self.a, self.b, self.x, g, g * self.inst.l1_weight, self.x_next)
        self._swap()

    def _pgd(self):
        self.backend.pgd_step(self.a, self.b, self.x, self.steps.gamma, self.inst.l1_budget, self.x_next, self.work)
        self._swap()

    def _ah(self):
        s = self.steps
        self.backend.ah_step(self.a, self.b, self.c, self.c_t, self.d, self.x, self.lam, s.gamma, s.eta, self.x_next, self.lam_next)
        self._swap()
        self.lam, self.lam_next = self.lam_next, self.lam


def _per_call(step):
    def advance(k: int) -> None:
        for _ in range(k):
            step()

    return advance


def time_steps(advance, reps: int, warmup: int, batch: int) -> float:
    """Median seconds per step over ``reps`` timed calls of ``advance(batch)``."""
    for _ in range(warmup):
        advance(batch)
    samples = np.empty(reps)
    clock = time.perf_counter
    for r in range(reps):
        t0 = clock()
        advance(batch)
        samples[r] = (clock() - t0) / batch
    return float(np.median(samples))


def _batch_size(advance, min_batch_s: float) -> int:
    k, elapsed = 1, 0.0
    while k < 1 << 20:
        t0 = time.perf_counter()
        advance(k)
        elapsed = time.perf_counter() - t0
        if elapsed >= min_batch_s / 4:
            break
        k *= 2
    return max(1, math.ceil(min_batch_s * k / max(elapsed, 1e-9)))


def default_dims(variant: Variant | str, sizes=DEFAULT_SIZES) -> list[tuple[int, int]]:
    """``(n, 0)`` per size; for LC every ``LC_GRID`` cell with that ``n``, else ``(n, n // 2)``."""
    variant = Variant.parse(variant)
    if variant is not Variant.LINEARLY_CONSTRAINED:
        return [(n, 0) for n in sizes]
    out = []
    for n in sizes:
        cells = [cell for cell in LC_GRID if cell[0] == n]
        out += cells or [(n, n // 2)]
    return out


def bench_grid(
    variant: Variant | str,
    dims,
    reps: int = MIN_REPS,
    warmup: int = MIN_WARMUP,
    seed: int = 0,
    backend=None,
    min_batch_s: float = 2e-4,
    mode: str = "fused",
) -> list[BenchRecord]:
    """Benchmark classical and machine steps on one seeded baseline instance per ``(n, m)``."""
    variant = Variant.parse(variant)
    if reps < MIN_REPS:
        raise QpValidationError(f"reps below minimum ({reps} < {MIN_REPS})")
    if warmup < MIN_WARMUP:
        raise QpValidationError(f"warmup below minimum ({warmup} < {MIN_WARMUP})")
    if mode not in ("fused", "call"):
        raise QpValidationError(f"unknown timing mode {mode!r}")
    backend = kernels.active if backend is None else backend
    out = []
    for n, m in dims:
        inst = generate_baseline(n, m, variant, seed)
        classical = ClassicalStepper(inst, backend=backend)
        machine = build_machine(inst, backend=backend)
        if mode == "fused":
            c_adv, m_adv = classical.run, machine.layers
        else:
            c_adv, m_adv = _per_call(classical.step), _per_call(machine.layer)
        batch = max(_batch_size(c_adv, min_batch_s), _batch_size(m_adv, min_batch_s))
        classical.reset()
        machine.set_state(np.zeros(n), np.zeros(m) if m else None)
        c_s = time_steps(c_adv, reps, warmup, batch)
        m_s = time_steps(m_adv, reps, warmup, batch)
        out.append(BenchRecord(variant.value, n, m, c_s * 1e3, m_s * 1e3, m_s / c_s, reps, warmup, backend.BACKEND, batch, mode))
    return out


def cpu_model() -> str:
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    return line.split(":", 1)[1].strip()
    except OSError:
        pass
    return platform.processor() or platform.machine()
