"""Stochastic time-to-event predictor.

An affine link maps a feature vector to the expected event time, which
parameterizes the first-hitting-time law of a drifted Wiener process with
unit boundary: an inverse-Gaussian distribution with mean f(x) and shape
1/sigma_B^2. Probability outputs (density, CDF, survival) always use the
exact inverse-Gaussian form; the surrogate per-point log-likelihood used by
stage assignment is a separate, cheaper expression.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr

from .types import DegenerateStageError, StageModel

DIFFUSION_FLOOR = 1e-6
PREDICTION_FLOOR = 1e-3  # affine fits can go non-positive near the event


@dataclass(frozen=True)
class FirstHittingParams:
    """Inverse-Gaussian first-hitting parameters: mean mu_ig = f(x) and
    shape lambda_ig = 1/sigma_B^2, boundary fixed at 1."""

    mu_ig: float
    lambda_ig: float
    boundary: float = 1.0

    def __post_init__(self):
        if self.mu_ig <= 0 or self.lambda_ig <= 0:
            raise ValueError("mu_ig and lambda_ig must be positive")


@dataclass(frozen=True)
class LinkFit:
    """Affine link weights (intercept last) plus a rank-deficiency flag."""

    weights: np.ndarray
    ridge_fallback: bool = False


def fit_link(features: np.ndarray, labels: np.ndarray) -> LinkFit:
    """Least-squares affine link tau ~ A.x + b.

    Rank-deficient systems fall back to a small ridge on the feature weights
    (intercept unpenalized), which also resolves ties toward zero weights.
    """
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(labels, dtype=float)
    n, d = x.shape
    design = np.hstack([x, np.ones((n, 1))])
    weights, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank == d + 1:
        return LinkFit(weights)
    gram = design.T @ design
    lam = max(1e-6 * np.trace(x.T @ x) / max(d, 1), 1e-12)
    penalty = lam * np.eye(d + 1)
    penalty[-1, -1] = 0.0
    weights = np.linalg.solve(gram + penalty, design.T @ y)
    return LinkFit(weights, ridge_fallback=True)


def intercept_only_link(dim: int, mean_label: float) -> LinkFit:
    """Degenerate-stage link: predict the mean label regardless of features."""
    w = np.zeros(dim + 1)
    w[-1] = mean_label
    return LinkFit(w, ridge_fallback=True)


def fit_diffusion(labels: np.ndarray) -> tuple[float, float]:
    """Diffusion sigma_B and increment mean mu_tau from positive labels.

    mu_tau is the mean of 1/tau over the stage's points and
    sigma_B = sqrt(mean |1/tau - mu_tau|); the inner deviation is not
    squared, so sigma_B^2 is a mean absolute deviation of the increments.
    """
    taus = np.asarray(labels, dtype=float)
    if taus.size < 2:
        raise DegenerateStageError(f"need at least 2 labeled points, got {taus.size}")
    if np.any(taus <= 0):
        raise ValueError("labels must be strictly positive")
    inv = 1.0 / taus
    mu_tau = float(inv.mean())
    sigma = float(np.sqrt(np.abs(inv - mu_tau).mean()))
    return max(sigma, DIFFUSION_FLOOR), mu_tau


def hitting_params(stage: StageModel, x: np.ndarray) -> FirstHittingParams:
    """Build the hitting-time distribution for one observation under a stage,
    clamping the link output to stay a valid inverse-Gaussian mean."""
    fx = float(stage.link_predict(x))
    return FirstHittingParams(
        mu_ig=max(fx, PREDICTION_FLOOR),
        lambda_ig=1.0 / (stage.diffusion**2),
    )


def event_log_density(params: FirstHittingParams, tau) -> np.ndarray | float:
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    sigma_sq = 1.0 / params.lambda_ig
    out = -0.5 * (np.log(2.0 * np.pi * sigma_sq) + 3.0 * np.log(tau)) - (
        (1.0 - tau / params.mu_ig) ** 2
    ) / (2.0 * sigma_sq * tau)
    return out if out.ndim else float(out)


def event_density(params: FirstHittingParams, tau) -> np.ndarray | float:
    """Inverse-Gaussian density of the event occurring after a further tau."""
    out = np.exp(event_log_density(params, tau))
    return out if np.ndim(out) else float(out)


def event_cdf(params: FirstHittingParams, tau) -> np.ndarray | float:
    """Inverse-Gaussian CDF.

    The e^{2 lambda/mu} term overflows for tightly fit stages, so it is
    evaluated as exp(2 lambda/mu + log Phi(-z2)) with a log-CDF routine.
    """
    tau = np.asarray(tau, dtype=float)
    if np.any(tau <= 0):
        raise ValueError("tau must be positive")
    mu, lam = params.mu_ig, params.lambda_ig
    root = np.sqrt(lam / tau)
    first = ndtr(root * (tau / mu - 1.0))
    second = np.exp(2.0 * lam / mu + log_ndtr(-root * (tau / mu + 1.0)))
    out = np.clip(first + second, 0.0, 1.0)
    return out if out.ndim else float(out)


def survival(params: FirstHittingParams, tau) -> np.ndarray | float:
    """Probability the event has not occurred within a further tau."""
    out = 1.0 - event_cdf(params, tau)
    return out if np.ndim(out) else float(out)


def predicted_time(params: FirstHittingParams) -> float:
    """Point estimate: the mean of the hitting-time law, which is f(x)."""
    return params.mu_ig


def predictor_loglik(x: np.ndarray, tau: float, stage: StageModel) -> float:
    """Surrogate predictor log-likelihood of one (x, tau) pair under a stage
    (up to constant and scale); steers stage assignment only."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    fx = float(stage.link_predict(x))
    sigma_sq = stage.diffusion**2
    return float(
        -abs(tau - fx) - np.log(sigma_sq) - abs(1.0 / tau - stage.increment_mean) / sigma_sq
    )


def predictor_loglik_many(features: np.ndarray, taus: np.ndarray, stage: StageModel) -> np.ndarray:
    """Row-wise surrogate predictor term; hot path for the assignment lattice.

    Entries with tau <= 0 (the event tick) are returned as 0 so the caller
    can drop the predictor term there.
    """
    taus = np.asarray(taus, dtype=float)
    fx = np.asarray(features, dtype=float) @ stage.link_weights[:-1] + stage.link_weights[-1]
    sigma_sq = stage.diffusion**2
    out = np.zeros_like(taus)
    ok = taus > 0
    out[ok] = (
        -np.abs(taus[ok] - fx[ok])
        - np.log(sigma_sq)
        - np.abs(1.0 / taus[ok] - stage.increment_mean) / sigma_sq
    )
    return out
