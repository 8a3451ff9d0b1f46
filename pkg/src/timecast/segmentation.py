"""Joint objective, monotone stage assignment, and the alternating
learning loop.

One outer iteration refits every stage model with assignments held fixed,
then reassigns every sequence with models held fixed. Each assignment pass
is a dynamic program over the (K, T) lattice that is globally optimal under
the never-decreasing stage constraint and costs O(K^2 T) at worst.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._dp import dp_backtrace, dp_forward, dp_path
from .data import window_features
from .glasso import (
    GlassoConfig,
    empirical_stats,
    fit_precision,
    gaussian_loglik,
    gaussian_loglik_many,
    offdiag_l1,
)
from .hitting import (
    DIFFUSION_FLOOR,
    fit_diffusion,
    fit_link,
    intercept_only_link,
    predictor_loglik,
    predictor_loglik_many,
)
from .types import (
    HyperParams,
    LabeledCollection,
    ModelSet,
    StageAssignmentPath,
    StageModel,
    WelfordStats,
)


@dataclass(frozen=True)
class DpTable:
    """Filled assignment lattice: accumulated costs and predecessor stages."""

    gamma: np.ndarray
    backptr: np.ndarray

    def best_path(self) -> tuple[np.ndarray, float]:
        path = dp_backtrace(self.gamma, self.backptr)
        return path, float(self.gamma[path[-1], -1])


@dataclass(frozen=True)
class FitReport:
    """Outer-loop diagnostics from one learning run."""

    objective_trace: tuple[float, ...]
    iterations: int
    converged: bool
    stage_counts: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "objective_trace": list(self.objective_trace),
            "iterations": self.iterations,
            "converged": self.converged,
            "stage_counts": list(self.stage_counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get("TIMECAST_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    n = _thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def sequence_labels(length: int) -> np.ndarray:
    """Remaining-time labels for ticks 1..T; the event tick gets 0 and is
    excluded from predictor terms and training pairs."""
    return np.arange(length - 1, -1, -1, dtype=float)


def prepare_features(collection: LabeledCollection, window: int) -> list[tuple[np.ndarray, np.ndarray]]:
    return [
        (window_features(seq.values, window), sequence_labels(len(seq)))
        for seq in collection.sequences
    ]


def point_cost(x: np.ndarray, tau: float, stage: StageModel, beta: float) -> float:
    """Per-point assignment cost: descriptor log-likelihood plus the
    beta-weighted predictor surrogate."""
    cost = gaussian_loglik(x, stage.mean, stage.precision)
    if beta != 0.0:
        cost += beta * predictor_loglik(x, tau, stage)
    return float(cost)


def stage_cost_matrix(
    features: np.ndarray, labels: np.ndarray, models: ModelSet, beta: float
) -> np.ndarray:
    """(K, T) matrix of per-tick costs; rows follow the stage order.

    The predictor term is dropped wherever the label is non-positive (the
    event tick), leaving the descriptor term alone there.
    """
    rows = []
    for stage in models.stages:
        row = gaussian_loglik_many(features, stage.mean, stage.precision)
        if beta != 0.0:
            row = row + beta * predictor_loglik_many(features, labels, stage)
        rows.append(row)
    return np.ascontiguousarray(np.stack(rows))


def dp_table(costs: np.ndarray) -> DpTable:
    gamma, backptr = dp_forward(np.ascontiguousarray(costs, dtype=float))
    return DpTable(gamma, backptr)


def assign_stages_dp(seq, models: ModelSet, beta: float | None = None) -> StageAssignmentPath:
    """Globally optimal monotone stage assignment for one sequence."""
    if beta is None:
        beta = models.hyper.beta
    features = window_features(seq.values, models.hyper.window)
    labels = sequence_labels(len(seq))
    path, _ = dp_path(stage_cost_matrix(features, labels, models, beta))
    return StageAssignmentPath(tuple(int(k) + 1 for k in path))


def total_objective(
    collection: LabeledCollection,
    models: ModelSet,
    assignments: list[StageAssignmentPath],
    alpha: float | None = None,
    beta: float | None = None,
) -> float:
    """Joint objective over the collection: summed assigned point costs
    minus the per-stage off-diagonal l1 penalties."""
    if alpha is None:
        alpha = models.hyper.alpha
    if beta is None:
        beta = models.hyper.beta
    prepared = prepare_features(collection, models.hyper.window)
    total = 0.0
    for (features, labels), path in zip(prepared, assignments):
        costs = stage_cost_matrix(features, labels, models, beta)
        idx = path.as_array() - 1
        total += float(costs[idx, np.arange(len(labels))].sum())
    total -= alpha * sum(offdiag_l1(s.precision) for s in models.stages)
    return total


def _default_stage(dim: int) -> StageModel:
    link = np.zeros(dim + 1)
    link[-1] = 1.0
    return StageModel(
        mean=np.zeros(dim),
        precision=np.eye(dim),
        link_weights=link,
        diffusion=DIFFUSION_FLOOR,
        increment_mean=1.0,
        count=0,
        stale=True,
    )


def _update_from_features(
    prepared: list[tuple[np.ndarray, np.ndarray]],
    assignments: list[StageAssignmentPath],
    k: int,
    previous: ModelSet | None,
    alpha: float,
    cfg: GlassoConfig,
) -> ModelSet:
    dim = prepared[0][0].shape[1]
    per_stage_points: list[list[np.ndarray]] = [[] for _ in range(k)]
    per_stage_pairs: list[list[tuple[np.ndarray, np.ndarray]]] = [[] for _ in range(k)]
    for (features, labels), path in zip(prepared, assignments):
        idx = path.as_array() - 1
        if idx.max() >= k:
            raise ValueError(f"assignment references stage {idx.max() + 1} > K={k}")
        for s in range(k):
            mask = idx == s
            if not mask.any():
                continue
            per_stage_points[s].append(features[mask])
            labeled = mask & (labels > 0)
            if labeled.any():
                per_stage_pairs[s].append((features[labeled], labels[labeled]))

    def fit_one(s: int) -> StageModel:
        prev = previous.stages[s] if previous is not None and s < previous.k else None
        if not per_stage_points[s]:
            stale = prev if prev is not None else _default_stage(dim)
            return StageModel(
                mean=stale.mean,
                precision=stale.precision,
                link_weights=stale.link_weights,
                diffusion=stale.diffusion,
                increment_mean=stale.increment_mean,
                count=0,
                sum_stats=WelfordStats.empty(dim),
                stale=True,
            )
        points = np.vstack(per_stage_points[s])
        if per_stage_pairs[s]:
            xs = np.vstack([p[0] for p in per_stage_pairs[s]])
            taus = np.concatenate([p[1] for p in per_stage_pairs[s]])
        else:
            xs, taus = np.empty((0, dim)), np.empty(0)
        return _fit_stage(points, xs, taus, alpha, cfg, prev)

    stages = _map(fit_one, list(range(k)))
    hyper = previous.hyper if previous is not None else HyperParams(alpha=alpha)
    return ModelSet(tuple(stages), hyper)


def _fit_stage(
    points: np.ndarray,
    labeled_features: np.ndarray,
    taus: np.ndarray,
    alpha: float,
    cfg: GlassoConfig,
    previous: StageModel | None,
) -> StageModel:
    dim = points.shape[1]
    stats = empirical_stats(points)
    precision = fit_precision(stats, alpha, cfg)

    if taus.size >= dim + 2:
        link_weights = fit_link(labeled_features, taus).weights
    elif taus.size >= 1:
        link_weights = intercept_only_link(dim, float(taus.mean())).weights
    elif previous is not None:
        link_weights = previous.link_weights
    else:
        link_weights = intercept_only_link(dim, 1.0).weights

    if taus.size >= 2:
        diffusion, increment_mean = fit_diffusion(taus)
    elif taus.size == 1:
        diffusion, increment_mean = DIFFUSION_FLOOR, float(1.0 / taus[0])
    elif previous is not None:
        diffusion, increment_mean = previous.diffusion, previous.increment_mean
    else:
        diffusion, increment_mean = DIFFUSION_FLOOR, 1.0

    return StageModel(
        mean=stats.mean,
        precision=precision,
        link_weights=link_weights,
        diffusion=diffusion,
        increment_mean=increment_mean,
        count=stats.count,
        sum_stats=WelfordStats.from_points(points),
    )


def update_stage_models(
    collection: LabeledCollection,
    assignments: list[StageAssignmentPath],
    models: ModelSet,
    alpha: float | None = None,
    cfg: GlassoConfig = GlassoConfig(),
) -> ModelSet:
    """Refit every stage from its assigned points; stages with no points keep
    their previous parameters and come back flagged stale."""
    if alpha is None:
        alpha = models.hyper.alpha
    prepared = prepare_features(collection, models.hyper.window)
    return _update_from_features(prepared, assignments, models.k, models, alpha, cfg)


def _block_assignments(length: int, k: int, rng: np.random.Generator | None) -> np.ndarray:
    if length < k:
        return np.ones(length, dtype=int)
    bounds = [round(j * length / k) for j in range(k + 1)]
    if rng is not None:
        block = length / k
        jitter = int(0.1 * block)
        if jitter > 0:
            for j in range(1, k):
                b = bounds[j] + int(rng.integers(-jitter, jitter + 1))
                bounds[j] = min(max(b, bounds[j - 1] + 1), length - (k - j))
    out = np.empty(length, dtype=int)
    for j in range(k):
        out[bounds[j] : bounds[j + 1]] = j + 1
    return out


def initialize(
    collection: LabeledCollection,
    k_init: int,
    hyper: HyperParams | None = None,
    seed: int | None = None,
    cfg: GlassoConfig = GlassoConfig(),
) -> tuple[ModelSet, list[StageAssignmentPath]]:
    """Equal-length contiguous blocks per sequence (monotone by construction),
    cut points jittered up to +/-10% of the block length when seeded."""
    if hyper is None:
        hyper = HyperParams(k_init=k_init)
    rng = np.random.default_rng(seed) if seed is not None else None
    assignments = [
        StageAssignmentPath(tuple(_block_assignments(len(seq), k_init, rng)))
        for seq in collection.sequences
    ]
    prepared = prepare_features(collection, hyper.window)
    base = ModelSet(tuple(_default_stage(prepared[0][0].shape[1]) for _ in range(k_init)), hyper)
    models = _update_from_features(prepared, assignments, k_init, base, hyper.alpha, cfg)
    return models, assignments


def _prune(
    models: ModelSet,
    assignments: list[StageAssignmentPath],
    empty_streak: np.ndarray,
) -> tuple[ModelSet, list[StageAssignmentPath], np.ndarray]:
    drop = np.flatnonzero(empty_streak >= 2)
    if drop.size == 0 or models.k - drop.size < 1:
        return models, assignments, empty_streak
    keep = [i for i in range(models.k) if i not in set(drop.tolist())]
    remap = {old: new for new, old in enumerate(keep)}
    stages = tuple(models.stages[i] for i in keep)
    new_assignments = [
        StageAssignmentPath(tuple(remap[s - 1] + 1 for s in path.stages)) for path in assignments
    ]
    return ModelSet(stages, models.hyper), new_assignments, empty_streak[keep]


def learn(
    collection: LabeledCollection,
    hyper: HyperParams,
    seed: int | None = None,
    prune_empty_stages: bool = True,
    cfg: GlassoConfig = GlassoConfig(),
) -> tuple[ModelSet, list[StageAssignmentPath], FitReport]:
    """Alternating optimization until the relative objective change drops
    below ``hyper.tol`` or ``hyper.max_iter`` passes run out."""
    if len(collection) == 0:
        raise ValueError("empty collection")
    prepared = prepare_features(collection, hyper.window)
    models, assignments = initialize(collection, hyper.k_init, hyper, seed, cfg)
    empty_streak = np.zeros(models.k)

    trace: list[float] = []
    converged = False
    iterations = 0
    for iterations in range(1, hyper.max_iter + 1):
        models = _update_from_features(prepared, assignments, models.k, models, hyper.alpha, cfg)

        def assign_one(item):
            features, labels = item
            costs = stage_cost_matrix(features, labels, models, hyper.beta)
            return dp_path(costs)

        results = _map(assign_one, prepared)
        assignments = [StageAssignmentPath(tuple(int(k) + 1 for k in p)) for p, _ in results]
        penalty = hyper.alpha * sum(offdiag_l1(s.precision) for s in models.stages)
        objective = float(sum(v for _, v in results)) - penalty
        trace.append(objective)

        counts = np.zeros(models.k, dtype=int)
        for path in assignments:
            idx, c = np.unique(path.as_array() - 1, return_counts=True)
            counts[idx] += c
        empty_streak = np.where(counts == 0, empty_streak + 1, 0.0)
        if prune_empty_stages:
            models, assignments, empty_streak = _prune(models, assignments, empty_streak)

        if len(trace) >= 2:
            prev, cur = trace[-2], trace[-1]
            if abs(cur - prev) <= hyper.tol * max(1.0, abs(prev)):
                converged = True
                break

    final_counts = np.zeros(models.k, dtype=int)
    for path in assignments:
        idx, c = np.unique(path.as_array() - 1, return_counts=True)
        final_counts[idx] += c
    report = FitReport(
        objective_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        stage_counts=tuple(int(c) for c in final_counts),
    )
    return models, assignments, report
