"""Backend selection for the machine kernels.

The compiled extension is used when it imports; set ``ATTNQP_PURE_PYTHON=1``
to force the NumPy fallback.
"""
import os

from . import _fallback

fallback = _fallback
compiled = None

if os.environ.get("ATTNQP_PURE_PYTHON") != "1":
    try:
        from . import _kernels as compiled
    except ImportError:
        compiled = None

active = compiled if compiled is not None else _fallback
BACKEND = active.BACKEND

head_sum = active.head_sum
soft_threshold_ffn = active.soft_threshold_ffn
threshold_loop = active.threshold_loop
gd_step = active.gd_step
ista_step = active.ista_step
pgd_step = active.pgd_step
ah_step = active.ah_step
HeadPlan = active.HeadPlan
u_layers = active.u_layers
lc_layers = active.lc_layers
classical_run = active.classical_run


def backends():
    """Name -> module for every importable backend."""
    out = {"numpy": _fallback}
    if compiled is not None:
        out["cython"] = compiled
    return out
