import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from timecast import (
    HyperParams,
    LabeledCollection,
    ModelSet,
    SensorSequence,
    StageModel,
    SyntheticSpec,
    SyntheticStage,
    generate_synthetic,
)


def random_pd(dim: int, rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim + 2, dim))
    return a.T @ a / (dim + 2) + scale * np.eye(dim)


def make_stage(
    mean,
    precision=None,
    link=None,
    diffusion=1.0,
    increment_mean=1.0,
) -> StageModel:
    mean = np.asarray(mean, dtype=float)
    d = mean.shape[0]
    if precision is None:
        precision = np.eye(d)
    if link is None:
        link = np.zeros(d + 1)
        link[-1] = 1.0
    return StageModel(
        mean=mean,
        precision=np.asarray(precision, dtype=float),
        link_weights=np.asarray(link, dtype=float),
        diffusion=diffusion,
        increment_mean=increment_mean,
    )


def random_models(k: int, dim: int, rng: np.random.Generator, hyper=None) -> ModelSet:
    stages = []
    for _ in range(k):
        link = rng.normal(size=dim + 1)
        link[-1] = abs(link[-1]) + 5.0
        stages.append(
            StageModel(
                mean=rng.normal(size=dim) * 2,
                precision=random_pd(dim, rng),
                link_weights=link,
                diffusion=float(rng.uniform(0.3, 2.0)),
                increment_mean=float(rng.uniform(0.05, 1.0)),
            )
        )
    return ModelSet(tuple(stages), hyper or HyperParams(window=1, k_init=k))


def three_stage_spec(n_instances: int, seed: int, dim: int = 4) -> SyntheticSpec:
    chain = 2 * np.eye(dim) + np.diag([0.9] * (dim - 1), 1) + np.diag([0.9] * (dim - 1), -1)
    mean3 = np.zeros(dim)
    mean3[0] = 0.5
    return SyntheticSpec(
        n_instances=n_instances,
        stages=(
            SyntheticStage(np.zeros(dim), np.eye(dim)),
            SyntheticStage(np.full(dim, 4.0), 2 * np.eye(dim)),
            SyntheticStage(mean3, chain),
        ),
        stage_durations=((40, 60), (40, 60), (40, 60)),
        noise_seed=seed,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_collection() -> LabeledCollection:
    collection, _ = generate_synthetic(three_stage_spec(6, seed=11))
    return collection


def simple_sequence(t: int = 12, d: int = 2, seed: int = 0, instance_id: str = "seq") -> SensorSequence:
    rng = np.random.default_rng(seed)
    return SensorSequence(rng.normal(size=(t, d)), instance_id)
