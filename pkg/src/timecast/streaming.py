"""Per-tick adaptive prediction and end-of-stream model growth.

The per-tick stage estimate maintains only the previous cost vector (one
entry per stage) and updates it with descriptor log-likelihoods alone, so
each tick costs O(K^2) at worst regardless of how long the stream has run.
When a stream reaches its event, a candidate stage seeded from the worst
predicted stage is fit on the finished stream and adopted only if it
strictly improves prediction accuracy there (generate-and-validate).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._dp_numpy import prefix_max_argmax
from .data import window_features
from .glasso import GlassoConfig, EmpiricalStats, fit_precision, gaussian_loglik_many
from .hitting import (
    DIFFUSION_FLOOR,
    FirstHittingParams,
    fit_diffusion,
    fit_link,
    hitting_params,
    intercept_only_link,
    predicted_time,
    survival,
)
from .metrics import mape
from .segmentation import sequence_labels, stage_cost_matrix
from ._dp import dp_path
from .types import (
    HyperParams,
    ModelSet,
    SensorSequence,
    StageModel,
    WelfordStats,
)


@dataclass(frozen=True)
class PredictionOutput:
    """One tick's output: current stage, hitting-time parameters, and the
    distribution mean as the point estimate."""

    tick: int
    stage: int  # 1-based
    params: FirstHittingParams
    point_estimate: float
    survival_curve: tuple[np.ndarray, np.ndarray] | None = None

    def to_dict(self) -> dict:
        out = {
            "tick": self.tick,
            "stage": self.stage,
            "mu": self.params.mu_ig,
            "lambda": self.params.lambda_ig,
            "point_estimate": self.point_estimate,
        }
        if self.survival_curve is not None:
            taus, values = self.survival_curve
            out["survival"] = {"tau": list(map(float, taus)), "value": list(map(float, values))}
        return out


@dataclass(frozen=True)
class StreamState:
    """Carried between ticks: the cost vector, the current stage, a short
    raw-observation window for feature construction, and the feature history
    kept for the end-of-stream update."""

    gamma: np.ndarray | None = None
    current_stage: int = 0
    tick: int = 0
    recent: tuple[np.ndarray, ...] = ()
    history: tuple[np.ndarray, ...] = ()
    history_cap: int | None = None
    ops_last_tick: int = 0

    def resized(self, insert_pos: int) -> "StreamState":
        """Remap after a stage insertion at 0-based position ``insert_pos``.

        The new stage inherits the best accumulated cost among its
        predecessors, and the current stage index never decreases.
        """
        if self.gamma is None:
            return self
        inherited = float(np.max(self.gamma[: insert_pos + 1])) if insert_pos > 0 else float(self.gamma[0])
        gamma = np.insert(self.gamma, insert_pos, inherited)
        stage = self.current_stage + 1 if self.current_stage >= insert_pos + 1 else self.current_stage
        return replace(self, gamma=gamma, current_stage=stage)


def _stream_feature(state: StreamState, x: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return np.asarray(x, dtype=float)
    past = list(state.recent[-(window - 1) :])
    first = past[0] if past else x
    rows = [first] * (window - 1 - len(past)) + past + [x]
    return np.concatenate([np.asarray(r, dtype=float) for r in rows])


def adaptive_predict(
    state: StreamState,
    x: np.ndarray,
    models: ModelSet,
    survival_grid: np.ndarray | None = None,
) -> tuple[PredictionOutput, StreamState]:
    """Advance one tick: update the cost vector with descriptor terms only,
    take the best stage (ties toward the lower index), and predict from it."""
    x = np.asarray(x, dtype=float)
    window = models.hyper.window
    feature = _stream_feature(state, x, window)
    if feature.shape[0] != models.dimension:
        raise ValueError(
            f"feature dimension {feature.shape[0]} does not match model dimension {models.dimension}"
        )
    psi = np.array(
        [
            gaussian_loglik_many(feature[None, :], s.mean, s.precision)[0]
            for s in models.stages
        ]
    )
    if state.tick == 0 or state.gamma is None:
        gamma = psi
    else:
        if state.gamma.shape[0] != models.k:
            raise ValueError("stream state K does not match the model set; resize first")
        run_max, _ = prefix_max_argmax(state.gamma)
        gamma = run_max + psi
    stage_idx = int(np.argmax(gamma))  # first max: lower index wins ties
    stage = models.stages[stage_idx]
    params = hitting_params(stage, feature)
    curve = None
    if survival_grid is not None:
        curve = (np.asarray(survival_grid, dtype=float), np.asarray(survival(params, survival_grid)))
    output = PredictionOutput(
        tick=state.tick + 1,
        stage=stage_idx + 1,
        params=params,
        point_estimate=predicted_time(params),
        survival_curve=curve,
    )
    history = state.history + (feature,)
    if state.history_cap is not None and len(history) > state.history_cap:
        history = history[-state.history_cap :]
    recent = (state.recent + (x,))[-(max(window - 1, 1)) :] if window > 1 else ()
    new_state = StreamState(
        gamma=gamma,
        current_stage=stage_idx + 1,
        tick=state.tick + 1,
        recent=recent,
        history=history,
        history_cap=state.history_cap,
        ops_last_tick=3 * models.k + 2,  # transition scan + cost add + argmax
    )
    return output, new_state


def replay(
    models: ModelSet, seq: SensorSequence, survival_grid: np.ndarray | None = None
) -> list[PredictionOutput]:
    """Run a finished sequence through the per-tick predictor."""
    state = StreamState()
    outputs = []
    for t in range(len(seq)):
        out, state = adaptive_predict(state, seq.values[t], models, survival_grid)
        outputs.append(out)
    return outputs


def stream_mape(models: ModelSet, seq: SensorSequence) -> float:
    """Prediction accuracy of a model set on one finished stream: MAPE of the
    per-tick point estimates against the true remaining times."""
    outputs = replay(models, seq)
    horizon = len(seq)
    pairs = [(outputs[t].point_estimate, horizon - (t + 1)) for t in range(horizon - 1)]
    return mape(pairs)


def welford_update(stage: StageModel, x: np.ndarray) -> StageModel:
    """Fold one observation into the stage's running statistics; the
    descriptor mean tracks the accumulator, other parameters are left for
    the end-of-stream refresh."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != stage.dimension:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {stage.dimension}")
    stats = stage.sum_stats.add(x)
    return replace(stage, sum_stats=stats, count=stats.count, mean=stats.mean)


@dataclass(frozen=True)
class UpdateReport:
    """Outcome of one generate-and-validate pass."""

    adopted: bool
    reason: str
    k_before: int
    k_after: int
    worst_stage: int | None = None  # 1-based
    insert_position: int | None = None  # 1-based position of the candidate
    mape_existing: float | None = None
    mape_candidate: float | None = None
    inner_iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "adopted": self.adopted,
            "reason": self.reason,
            "k_before": self.k_before,
            "k_after": self.k_after,
            "worst_stage": self.worst_stage,
            "insert_position": self.insert_position,
            "mape_existing": self.mape_existing,
            "mape_candidate": self.mape_candidate,
            "inner_iterations": self.inner_iterations,
        }


def _per_stage_mape(
    features: np.ndarray, labels: np.ndarray, path: np.ndarray, models: ModelSet
) -> dict[int, float]:
    out = {}
    for s in range(models.k):
        mask = (path == s) & (labels > 0)
        if not mask.any():
            continue
        stage = models.stages[s]
        preds = np.maximum(features[mask] @ stage.link_weights[:-1] + stage.link_weights[-1], 1e-3)
        out[s] = float(np.mean(np.abs(preds - labels[mask]) / labels[mask]))
    return out


def _candidate_stage(
    points: np.ndarray,
    labeled_points: np.ndarray,
    taus: np.ndarray,
    alpha: float,
    cfg: GlassoConfig,
    rng: np.random.Generator,
) -> StageModel:
    dim = points.shape[1]
    mean = points.mean(axis=0)
    dev = points - mean
    cov = dev.T @ dev / points.shape[0]
    eps = 1e-2 * np.trace(cov) / dim
    cov = cov + np.diag(eps * rng.uniform(0.5, 1.5, size=dim))
    precision = fit_precision(EmpiricalStats(mean, 0.5 * (cov + cov.T), points.shape[0]), alpha, cfg)
    if taus.size >= dim + 2:
        link_weights = fit_link(labeled_points, taus).weights
    elif taus.size >= 1:
        link_weights = intercept_only_link(dim, float(taus.mean())).weights
    else:
        link_weights = intercept_only_link(dim, 1.0).weights
    if taus.size >= 2:
        diffusion, increment_mean = fit_diffusion(taus)
    elif taus.size == 1:
        diffusion, increment_mean = DIFFUSION_FLOOR, float(1.0 / taus[0])
    else:
        diffusion, increment_mean = DIFFUSION_FLOOR, 1.0
    return StageModel(
        mean=mean,
        precision=precision,
        link_weights=link_weights,
        diffusion=diffusion,
        increment_mean=increment_mean,
        count=points.shape[0],
        sum_stats=WelfordStats.from_points(points),
    )


def _refresh_stages(
    base: ModelSet,
    features: np.ndarray,
    labels: np.ndarray,
    path: np.ndarray,
    base_stats: list[WelfordStats],
    candidate_index: int,
    alpha: float,
    cfg: GlassoConfig,
) -> ModelSet:
    """One online refresh.

    Pre-existing stages merge the stream's assigned points into their
    running statistics and refit the descriptor from the merged moments;
    their predictors stay as trained (the training pairs are not retained
    and the diffusion estimate is not reconstructible from moments). The
    candidate stage is fit entirely from its assigned points.
    """
    stages = []
    dim = base.dimension
    for s, stage in enumerate(base.stages):
        mask = path == s
        if s == candidate_index:
            if mask.sum() < 2:
                stages.append(stage)  # keep the seeded fit
                continue
            merged = WelfordStats.from_points(features[mask])
        else:
            if not mask.any():
                stages.append(replace(stage, sum_stats=base_stats[s], count=base_stats[s].count))
                continue
            merged = base_stats[s].merge(WelfordStats.from_points(features[mask]))
        precision = fit_precision(
            EmpiricalStats(merged.mean, merged.covariance, merged.count), alpha, cfg
        )
        link_weights = stage.link_weights
        diffusion, increment_mean = stage.diffusion, stage.increment_mean
        if s == candidate_index:
            labeled = mask & (labels > 0)
            taus = labels[labeled]
            if taus.size >= dim + 2:
                link_weights = fit_link(features[labeled], taus).weights
            elif taus.size >= 2:
                link_weights = intercept_only_link(dim, float(taus.mean())).weights
            if taus.size >= 2:
                diffusion, increment_mean = fit_diffusion(taus)
        stages.append(
            StageModel(
                mean=merged.mean,
                precision=precision,
                link_weights=link_weights,
                diffusion=diffusion,
                increment_mean=increment_mean,
                count=merged.count,
                sum_stats=merged,
            )
        )
    return ModelSet(tuple(stages), base.hyper)


def online_model_update(
    models: ModelSet,
    finished: SensorSequence,
    hyper: HyperParams | None = None,
    seed: int | None = None,
    insert_after_worst: bool = True,
    max_inner_iter: int = 10,
    cfg: GlassoConfig = GlassoConfig(),
) -> tuple[ModelSet, UpdateReport]:
    """Generate-and-validate growth on a finished stream.

    A candidate stage is seeded from the observations assigned to the stage
    with the worst prediction accuracy (highest MAPE), refit jointly with the
    augmented set on the finished stream, and adopted only if the augmented
    set strictly improves MAPE there.
    """
    if hyper is None:
        hyper = models.hyper
    k_before = models.k
    if len(finished) < 2:
        return models, UpdateReport(False, "stream shorter than 2 ticks", k_before, k_before)

    features = window_features(finished.values, hyper.window)
    labels = sequence_labels(len(finished))
    costs = stage_cost_matrix(features, labels, models, hyper.beta)
    path, _ = dp_path(costs)

    per_stage = _per_stage_mape(features, labels, path, models)
    if not per_stage:
        return models, UpdateReport(False, "no labeled ticks", k_before, k_before)
    worst = max(per_stage, key=lambda s: (per_stage[s], s))
    worst_mask = path == worst
    worst_labeled = worst_mask & (labels > 0)
    worst_points = features[worst_mask]
    if worst_points.shape[0] < 2:
        return models, UpdateReport(
            False,
            "worst stage has fewer than 2 assigned points",
            k_before,
            k_before,
            worst_stage=worst + 1,
        )

    rng = np.random.default_rng(seed)
    candidate = _candidate_stage(
        worst_points, features[worst_labeled], labels[worst_labeled], hyper.alpha, cfg, rng
    )
    insert_pos = worst + 1 if insert_after_worst else models.k
    augmented = ModelSet(
        models.stages[:insert_pos] + (candidate,) + models.stages[insert_pos:], models.hyper
    )
    base_stats = [s.sum_stats for s in augmented.stages]

    prev_path = None
    inner = 0
    for inner in range(1, max_inner_iter + 1):
        aug_costs = stage_cost_matrix(features, labels, augmented, hyper.beta)
        aug_path, _ = dp_path(aug_costs)
        augmented = _refresh_stages(
            augmented, features, labels, aug_path, base_stats, insert_pos, hyper.alpha, cfg
        )
        if prev_path is not None and np.array_equal(aug_path, prev_path):
            break
        prev_path = aug_path

    mape_existing = stream_mape(models, finished)
    mape_candidate = stream_mape(augmented, finished)
    if mape_candidate < mape_existing:
        report = UpdateReport(
            True,
            "candidate improved prediction accuracy",
            k_before,
            augmented.k,
            worst_stage=worst + 1,
            insert_position=insert_pos + 1,
            mape_existing=mape_existing,
            mape_candidate=mape_candidate,
            inner_iterations=inner,
        )
        return augmented, report
    report = UpdateReport(
        False,
        "candidate did not improve prediction accuracy",
        k_before,
        k_before,
        worst_stage=worst + 1,
        insert_position=insert_pos + 1,
        mape_existing=mape_existing,
        mape_candidate=mape_candidate,
        inner_iterations=inner,
    )
    return models, report
