"""Shared domain types: sensor sequences, hyperparameters and stage models.

Stage indices are 1-based everywhere a value crosses the public surface
(assignment paths, prediction records, serialized models); internal arrays
are 0-based.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

SCHEMA_VERSION = 1


class DataError(ValueError):
    """Malformed input data (bad ticks, NaN cells, inconsistent dimensions)."""


class SchemaError(DataError):
    """A required column or field is missing from an input file."""


class ConvergenceError(RuntimeError):
    """An iterative solver hit its iteration cap before its tolerances."""

    def __init__(self, message, iterations=None, primal_residual=None, dual_residual=None):
        super().__init__(message)
        self.iterations = iterations
        self.primal_residual = primal_residual
        self.dual_residual = dual_residual


class DegenerateStageError(ValueError):
    """Too few points assigned to a stage to estimate the requested parameter."""


@dataclass(frozen=True)
class Observation:
    """One multivariate sensor reading at a (1-based) time tick."""

    values: np.ndarray
    instance_id: str
    tick: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1:
            raise DataError("observation values must be a 1-d vector")
        if not np.all(np.isfinite(v)):
            raise DataError(f"non-finite value in observation (instance={self.instance_id}, tick={self.tick})")
        if self.tick < 0:
            raise DataError("tick must be non-negative")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class SensorSequence:
    """One instance's observation matrix, ticks 1..T_v, event at the last tick.

    ``values`` has shape (T_v, d). The remaining-time label at tick t is
    ``T_v - t`` and is strictly positive for every tick before the event.
    """

    values: np.ndarray
    instance_id: str = ""

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataError("sequence values must be a (T, d) matrix with T >= 1, d >= 1")
        if not np.all(np.isfinite(v)):
            t, c = np.argwhere(~np.isfinite(v))[0]
            raise DataError(
                f"non-finite value (instance={self.instance_id}, tick={int(t) + 1}, column={int(c)})"
            )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_observations(cls, observations: Sequence[Observation]) -> "SensorSequence":
        if not observations:
            raise DataError("empty observation list")
        obs = sorted(observations, key=lambda o: o.tick)
        ticks = [o.tick for o in obs]
        if ticks != list(range(1, len(obs) + 1)):
            raise DataError(
                f"ticks must be contiguous 1..T (instance={obs[0].instance_id}, got {ticks[:5]}...)"
            )
        return cls(np.stack([o.values for o in obs]), obs[0].instance_id)

    @property
    def event_time(self) -> int:
        return self.values.shape[0]

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return self.values.shape[0]

    def observations(self) -> list[Observation]:
        return [
            Observation(self.values[t], self.instance_id, t + 1)
            for t in range(self.values.shape[0])
        ]


def label_of(seq: SensorSequence, t: int) -> int:
    """Remaining time until the event at tick ``t``: T_v - t.

    Valid for 1 <= t < T_v; the event tick itself has no positive label and
    is excluded from training pairs.
    """
    if not 1 <= t < seq.event_time:
        raise ValueError(f"tick {t} out of labeled range [1, {seq.event_time})")
    return seq.event_time - t


@dataclass(frozen=True)
class LabeledCollection:
    """A set of fully observed sequences sharing one sensor dimension."""

    sequences: tuple[SensorSequence, ...]
    dimension: int

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        for s in self.sequences:
            if s.dimension != self.dimension:
                raise DataError(
                    f"sequence {s.instance_id!r} has dimension {s.dimension}, expected {self.dimension}"
                )

    @classmethod
    def from_sequences(cls, sequences: Iterable[SensorSequence]) -> "LabeledCollection":
        seqs = tuple(sequences)
        if not seqs:
            raise DataError("empty collection")
        return cls(seqs, seqs[0].dimension)

    def __len__(self) -> int:
        return len(self.sequences)

    def total_ticks(self) -> int:
        return sum(len(s) for s in self.sequences)


@dataclass(frozen=True)
class HyperParams:
    """Learning hyperparameters: sparsity alpha, predictor weight beta,
    initial stage count, sliding-window width, and outer-loop stopping rule."""

    alpha: float = 1.0
    beta: float = 0.1
    k_init: int = 5
    window: int = 1
    max_iter: int = 50
    tol: float = 1e-4

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.k_init < 1:
            raise ValueError("k_init must be >= 1")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class WelfordStats:
    """Single-pass running sum and co-moment matrix.

    ``mean`` is sum/count and ``covariance`` is m2/count (maximum-likelihood
    denominator), so a rebuilt empirical covariance matches the batch one.
    """

    sum: np.ndarray
    m2: np.ndarray
    count: int

    @classmethod
    def empty(cls, dim: int) -> "WelfordStats":
        return cls(np.zeros(dim), np.zeros((dim, dim)), 0)

    @classmethod
    def from_points(cls, points: np.ndarray) -> "WelfordStats":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        mean = pts.mean(axis=0)
        dev = pts - mean
        return cls(pts.sum(axis=0), dev.T @ dev, n)

    def add(self, x: np.ndarray) -> "WelfordStats":
        x = np.asarray(x, dtype=float)
        n = self.count + 1
        new_sum = self.sum + x
        if self.count == 0:
            return WelfordStats(new_sum, np.zeros_like(self.m2), 1)
        delta = x - self.sum / self.count
        delta2 = x - new_sum / n
        return WelfordStats(new_sum, self.m2 + np.outer(delta, delta2), n)

    def merge(self, other: "WelfordStats") -> "WelfordStats":
        # Chan et al. pairwise combination; exact for mean and m2.
        if self.count == 0:
            return other
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.sum / other.count - self.sum / self.count
        m2 = self.m2 + other.m2 + np.outer(delta, delta) * (self.count * other.count / n)
        return WelfordStats(self.sum + other.sum, m2, n)

    @property
    def mean(self) -> np.ndarray:
        if self.count == 0:
            raise DegenerateStageError("no points accumulated")
        return self.sum / self.count

    @property
    def covariance(self) -> np.ndarray:
        if self.count == 0:
            raise DegenerateStageError("no points accumulated")
        cov = self.m2 / self.count
        return 0.5 * (cov + cov.T)


@dataclass(frozen=True)
class StageModel:
    """One stage: Gaussian descriptor (mean, sparse precision) plus
    first-hitting-time predictor (affine link weights, diffusion)."""

    mean: np.ndarray
    precision: np.ndarray
    link_weights: np.ndarray  # length d'+1, intercept last
    diffusion: float
    increment_mean: float
    count: int = 0
    sum_stats: WelfordStats | None = None
    stale: bool = False

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.precision, dtype=float)
        lw = np.asarray(self.link_weights, dtype=float)
        d = mean.shape[0]
        if prec.shape != (d, d):
            raise ValueError(f"precision shape {prec.shape} does not match mean length {d}")
        if lw.shape != (d + 1,):
            raise ValueError(f"link_weights must have length {d + 1}, got {lw.shape}")
        if not np.allclose(prec, prec.T, atol=1e-10):
            raise ValueError("precision must be symmetric")
        if self.diffusion <= 0:
            raise ValueError("diffusion must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "link_weights", lw)
        if self.sum_stats is None:
            object.__setattr__(self, "sum_stats", WelfordStats.empty(d))

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    def link_predict(self, x: np.ndarray) -> float | np.ndarray:
        """Raw affine link output A.x + b (may be non-positive; clamp before
        building a hitting-time distribution)."""
        x = np.asarray(x, dtype=float)
        return x @ self.link_weights[:-1] + self.link_weights[-1]

    def with_stats(self, stats: WelfordStats) -> "StageModel":
        return replace(self, sum_stats=stats, count=stats.count)


@dataclass(frozen=True)
class StageAssignmentPath:
    """Per-tick stage indices (1-based), non-decreasing along the sequence."""

    stages: tuple[int, ...]

    def __post_init__(self):
        st = tuple(int(s) for s in self.stages)
        if not st:
            raise ValueError("empty assignment path")
        if any(s < 1 for s in st):
            raise ValueError("stage indices are 1-based")
        if any(a > b for a, b in zip(st, st[1:])):
            raise ValueError("stage assignments must be non-decreasing over time")
        object.__setattr__(self, "stages", st)

    def __len__(self) -> int:
        return len(self.stages)

    def __getitem__(self, i):
        return self.stages[i]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.stages, dtype=int)


@dataclass(frozen=True)
class ModelSet:
    """The ordered stage models; order is the progression order enforced by
    the assignment constraint."""

    stages: tuple[StageModel, ...]
    hyper: HyperParams = field(default_factory=HyperParams)

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.stages:
            raise ValueError("a model set needs at least one stage")
        d = self.stages[0].dimension
        for s in self.stages:
            if s.dimension != d:
                raise ValueError("all stages must share one feature dimension")

    @property
    def k(self) -> int:
        return len(self.stages)

    @property
    def dimension(self) -> int:
        return self.stages[0].dimension

    def to_json(self) -> str:
        return json.dumps(model_set_to_dict(self))

    @classmethod
    def from_json(cls, text: str) -> "ModelSet":
        return model_set_from_dict(json.loads(text))


def _stage_to_dict(s: StageModel) -> dict:
    return {
        "mean": s.mean.tolist(),
        "precision": s.precision.ravel().tolist(),  # row-major
        "link_weights": s.link_weights.tolist(),
        "diffusion": float(s.diffusion),
        "increment_mean": float(s.increment_mean),
        "count": int(s.count),
        "sum_stats": {
            "sum": s.sum_stats.sum.tolist(),
            "m2": s.sum_stats.m2.ravel().tolist(),
            "count": int(s.sum_stats.count),
        },
        "stale": bool(s.stale),
    }


def _stage_from_dict(obj: dict) -> StageModel:
    mean = np.asarray(obj["mean"], dtype=float)
    d = mean.shape[0]
    ss = obj["sum_stats"]
    return StageModel(
        mean=mean,
        precision=np.asarray(obj["precision"], dtype=float).reshape(d, d),
        link_weights=np.asarray(obj["link_weights"], dtype=float),
        diffusion=float(obj["diffusion"]),
        increment_mean=float(obj["increment_mean"]),
        count=int(obj["count"]),
        sum_stats=WelfordStats(
            np.asarray(ss["sum"], dtype=float),
            np.asarray(ss["m2"], dtype=float).reshape(d, d),
            int(ss["count"]),
        ),
        stale=bool(obj.get("stale", False)),
    )


def model_set_to_dict(models: ModelSet) -> dict:
    h = models.hyper
    return {
        "schema_version": SCHEMA_VERSION,
        "dimension": models.dimension,
        "hyper": {
            "alpha": h.alpha,
            "beta": h.beta,
            "k_init": h.k_init,
            "window": h.window,
            "max_iter": h.max_iter,
            "tol": h.tol,
        },
        "stages": [_stage_to_dict(s) for s in models.stages],
    }


def model_set_from_dict(obj: dict) -> ModelSet:
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {version!r}, expected {SCHEMA_VERSION}")
    h = obj["hyper"]
    hyper = HyperParams(
        alpha=h["alpha"],
        beta=h["beta"],
        k_init=h["k_init"],
        window=h["window"],
        max_iter=h["max_iter"],
        tol=h["tol"],
    )
    return ModelSet(tuple(_stage_from_dict(s) for s in obj["stages"]), hyper)
