"""Pure-numpy fallback for the monotone stage-assignment lattice.

Semantics are identical to the compiled kernel: transitions are allowed from
any stage k' <= k, and every tie is broken toward the lower stage index.
"""
from __future__ import annotations

import numpy as np


def prefix_max_argmax(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Running maximum over a 1-d array plus the first index achieving it.

    ``out_max[k] = max(values[:k+1])`` and ``out_arg[k]`` is the smallest
    j <= k with ``values[j] == out_max[k]``.
    """
    run_max = np.maximum.accumulate(values)
    # A strict increase marks a new (first) achiever of the running max.
    strict = np.empty(values.shape[0], dtype=bool)
    strict[0] = True
    strict[1:] = values[1:] > run_max[:-1]
    run_arg = np.maximum.accumulate(np.where(strict, np.arange(values.shape[0]), 0))
    return run_max, run_arg


def dp_forward(costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fill the (K, T) cost lattice.

    gamma[k, t] = max_{k' <= k} gamma[k', t-1] + costs[k, t]; backptr records
    the chosen predecessor stage (-1 in the first column).
    """
    costs = np.ascontiguousarray(costs, dtype=float)
    k_stages, horizon = costs.shape
    gamma = np.empty_like(costs)
    backptr = np.full((k_stages, horizon), -1, dtype=np.int32)
    gamma[:, 0] = costs[:, 0]
    for t in range(1, horizon):
        run_max, run_arg = prefix_max_argmax(gamma[:, t - 1])
        gamma[:, t] = run_max + costs[:, t]
        backptr[:, t] = run_arg
    return gamma, backptr


def dp_backtrace(gamma: np.ndarray, backptr: np.ndarray) -> np.ndarray:
    """Walk the recorded predecessors back from the best final stage."""
    horizon = gamma.shape[1]
    path = np.empty(horizon, dtype=np.int64)
    path[-1] = int(np.argmax(gamma[:, -1]))  # np.argmax takes the first max
    for t in range(horizon - 1, 0, -1):
        path[t - 1] = backptr[path[t], t]
    return path
