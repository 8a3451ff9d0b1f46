"""Per-stage Gaussian descriptor: empirical moments and the l1-sparse
precision matrix, estimated by ADMM with a scaled dual variable.

The stage objective being maximized is

    n * (log det L - Tr(Q L)) - alpha * ||L||_od1

over symmetric positive-definite L, where Q is the maximum-likelihood
empirical covariance of the stage's points and ||.||_od1 sums the absolute
off-diagonal entries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import ConvergenceError

LOG_2PI = np.log(2.0 * np.pi)
ZERO_SNAP = 1e-8  # off-diagonal entries below this are reported as exact zeros


@dataclass(frozen=True)
class GlassoConfig:
    rho: float = 1.0
    abs_tol: float = 1e-6
    rel_tol: float = 1e-4
    max_admm_iter: int = 2000

    def __post_init__(self):
        if self.rho <= 0 or self.abs_tol <= 0 or self.rel_tol <= 0:
            raise ValueError("rho and tolerances must be positive")
        if self.max_admm_iter < 1:
            raise ValueError("max_admm_iter must be >= 1")


@dataclass(frozen=True)
class EmpiricalStats:
    """Mean and ML covariance (denominator n) of one stage's points."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int


def empirical_stats(points: np.ndarray) -> EmpiricalStats:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 1:
        raise ValueError("empirical_stats needs at least one point")
    mean = pts.mean(axis=0)
    dev = pts - mean
    cov = dev.T @ dev / pts.shape[0]
    return EmpiricalStats(mean, 0.5 * (cov + cov.T), pts.shape[0])


def offdiag_l1(matrix: np.ndarray) -> float:
    return float(np.abs(matrix).sum() - np.abs(np.diag(matrix)).sum())


def _soft_threshold(a: np.ndarray, kappa: float) -> np.ndarray:
    return np.sign(a) * np.maximum(np.abs(a) - kappa, 0.0)


def _load_if_needed(cov: np.ndarray, count: int) -> np.ndarray:
    """Diagonal loading for rank-deficient stages (few points early on)."""
    d = cov.shape[0]
    eigmin = float(np.linalg.eigvalsh(cov).min())
    near_singular = eigmin < 1e-10 * max(1.0, np.trace(cov) / d)
    if count < d + 1 or near_singular:
        eps = max(1e-3 * np.trace(cov) / d, 1e-6)
        return cov + eps * np.eye(d)
    return cov


def fit_precision(stats: EmpiricalStats, alpha: float, cfg: GlassoConfig = GlassoConfig()) -> np.ndarray:
    """Sparse precision matrix for one stage via ADMM (Boyd-style splitting).

    The x-update is the eigendecomposition proximal step for
    Tr(Q X) - log det X, the z-update soft-thresholds off-diagonals at
    alpha / (n * rho), and the stopping rule uses primal/dual residuals with
    absolute plus scaled relative tolerances.
    """
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    q = np.asarray(stats.covariance, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("covariance contains non-finite entries")
    q = _load_if_needed(q, stats.count)
    d = q.shape[0]
    lam = alpha / max(stats.count, 1)  # per-sample penalty weight
    rho = cfg.rho

    z = np.zeros((d, d))
    u = np.zeros((d, d))
    x = np.eye(d)
    off_mask = ~np.eye(d, dtype=bool)

    for it in range(1, cfg.max_admm_iter + 1):
        # x-update: minimize Tr(QX) - logdet X + (rho/2)||X - Z + U||_F^2
        es, vecs = np.linalg.eigh(rho * (z - u) - q)
        xi = (es + np.sqrt(es * es + 4.0 * rho)) / (2.0 * rho)
        x = (vecs * xi) @ vecs.T

        z_old = z
        ax = x + u
        z = ax.copy()
        z[off_mask] = _soft_threshold(ax[off_mask], lam / rho)
        u = u + x - z

        r_norm = np.linalg.norm(x - z)
        s_norm = np.linalg.norm(rho * (z - z_old))
        eps_pri = d * cfg.abs_tol + cfg.rel_tol * max(np.linalg.norm(x), np.linalg.norm(z))
        eps_dual = d * cfg.abs_tol + cfg.rel_tol * np.linalg.norm(rho * u)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            break
        # residual balancing; a fixed rho stalls on near-singular loaded Q
        if r_norm > 10.0 * s_norm:
            rho *= 2.0
            u /= 2.0
        elif s_norm > 10.0 * r_norm:
            rho /= 2.0
            u *= 2.0
    else:
        raise ConvergenceError(
            f"graphical lasso ADMM did not converge in {cfg.max_admm_iter} iterations "
            f"(primal {r_norm:.3e}, dual {s_norm:.3e})",
            iterations=cfg.max_admm_iter,
            primal_residual=float(r_norm),
            dual_residual=float(s_norm),
        )

    out = 0.5 * (z + z.T)
    snap = off_mask & (np.abs(out) < ZERO_SNAP)
    out[snap] = 0.0
    if np.linalg.eigvalsh(out).min() <= 0:
        # z can sit marginally outside the PD cone at loose tolerances;
        # the x-iterate is PD by construction.
        out = 0.5 * (x + x.T)
        snap = off_mask & (np.abs(out) < ZERO_SNAP)
        out[snap] = 0.0
    return out


def gaussian_loglik(x: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> float:
    """Exact log density of x under N(mean, precision^{-1})."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    if x.shape != mean.shape:
        raise ValueError(f"dimension mismatch: x {x.shape} vs mean {mean.shape}")
    dev = x - mean
    sign, logdet = np.linalg.slogdet(precision)
    if sign <= 0:
        raise ValueError("precision must be positive-definite")
    d = x.shape[0]
    return float(-0.5 * dev @ precision @ dev + 0.5 * logdet - 0.5 * d * LOG_2PI)


def gaussian_loglik_many(points: np.ndarray, mean: np.ndarray, precision: np.ndarray) -> np.ndarray:
    """Row-wise log density for a (T, d') matrix of points; hot path for the
    assignment lattice."""
    dev = np.asarray(points, dtype=float) - mean
    sign, logdet = np.linalg.slogdet(precision)
    if sign <= 0:
        raise ValueError("precision must be positive-definite")
    quad = np.einsum("ij,jk,ik->i", dev, precision, dev)
    d = dev.shape[1]
    return -0.5 * quad + 0.5 * logdet - 0.5 * d * LOG_2PI


def stage_descriptor_objective(
    points: np.ndarray, mean: np.ndarray, precision: np.ndarray, alpha: float
) -> float:
    """Sum of point log densities minus the off-diagonal l1 penalty."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return float(gaussian_loglik_many(pts, mean, precision).sum() - alpha * offdiag_l1(precision))
