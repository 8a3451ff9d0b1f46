#!/usr/bin/env python3
"""Benchmark the compiled assignment kernel against the numpy fallback.

Times the raw (K, T) lattice fill plus backtrace for both backends, and a
full training run on synthetic data with whichever backend is active.

    python bench/compare_backends.py [--full]
"""
import argparse
import time

import numpy as np

from timecast import HyperParams, SyntheticSpec, SyntheticStage, generate_synthetic, learn
from timecast import _dp_numpy
from timecast._dp import BACKEND

try:
    from timecast import _dp_native
except ImportError:
    _dp_native = None


def time_backend(forward, backtrace, costs, repeats=5):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        gamma, backptr = forward(costs)
        backtrace(gamma, backptr)
        best = min(best, time.perf_counter() - start)
    return best


def bench_kernel():
    rng = np.random.default_rng(0)
    print(f"active backend: {BACKEND}")
    print(f"{'K':>4} {'T':>8} {'numpy (ms)':>12} {'native (ms)':>12} {'speedup':>8}")
    for k, t in [(5, 1_000), (5, 10_000), (5, 100_000), (10, 100_000), (20, 100_000)]:
        costs = np.ascontiguousarray(rng.normal(size=(k, t)))
        t_py = time_backend(_dp_numpy.dp_forward, _dp_numpy.dp_backtrace, costs)
        if _dp_native is not None:
            t_nat = time_backend(_dp_native.dp_forward, _dp_native.dp_backtrace, costs)
            print(f"{k:>4} {t:>8} {t_py * 1e3:>12.2f} {t_nat * 1e3:>12.2f} {t_py / t_nat:>8.1f}x")
        else:
            print(f"{k:>4} {t:>8} {t_py * 1e3:>12.2f} {'n/a':>12} {'':>8}")


def bench_training():
    spec = SyntheticSpec(
        n_instances=20,
        stages=(
            SyntheticStage(np.zeros(4), np.eye(4)),
            SyntheticStage(np.full(4, 4.0), np.eye(4) * 2),
            SyntheticStage(np.array([0.5, 0.0, 0.0, 0.0]), 2 * np.eye(4) + np.diag([0.9] * 3, 1) + np.diag([0.9] * 3, -1)),
        ),
        stage_durations=((80, 120), (80, 120), (80, 120)),
        noise_seed=3,
    )
    collection, _ = generate_synthetic(spec)
    hyper = HyperParams(alpha=1.0, beta=0.1, k_init=3, window=1, max_iter=20)
    start = time.perf_counter()
    _, _, report = learn(collection, hyper, seed=0)
    elapsed = time.perf_counter() - start
    print(
        f"\ntraining ({collection.total_ticks()} ticks, backend={BACKEND}): "
        f"{elapsed:.2f}s over {report.iterations} iterations"
    )


if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--full", action="store_true", help="also run the training benchmark")
    args = parser.parse_args()
    bench_kernel()
    if args.full:
        bench_training()
