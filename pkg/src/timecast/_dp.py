"""Backend selection for the stage-assignment lattice kernel.

Prefers the compiled extension; falls back to the numpy implementation when
the extension is absent or TIMECAST_PURE_PYTHON is set. Both backends return
bit-identical lattices (same operation order per cell).
"""
from __future__ import annotations

import os

import numpy as np

from . import _dp_numpy

BACKEND = "python"
dp_forward = _dp_numpy.dp_forward
dp_backtrace = _dp_numpy.dp_backtrace

if not os.environ.get("TIMECAST_PURE_PYTHON"):
    try:
        from . import _dp_native

        dp_forward = _dp_native.dp_forward
        dp_backtrace = _dp_native.dp_backtrace
        BACKEND = "native"
    except ImportError:
        pass


def backend() -> str:
    return BACKEND


def dp_path(costs: np.ndarray) -> tuple[np.ndarray, float]:
    """Best monotone path through a (K, T) cost matrix and its total cost."""
    costs = np.ascontiguousarray(costs, dtype=float)
    gamma, backptr = dp_forward(costs)
    path = dp_backtrace(gamma, backptr)
    return path, float(gamma[path[-1], -1])
