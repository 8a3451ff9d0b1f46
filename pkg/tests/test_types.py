import json

import numpy as np
import pytest

from timecast import (
    DataError,
    HyperParams,
    LabeledCollection,
    ModelSet,
    Observation,
    SensorSequence,
    StageAssignmentPath,
    StageModel,
    WelfordStats,
    label_of,
)
from conftest import make_stage, random_models, simple_sequence


class TestLabelOf:
    def test_direct_subtraction(self):
        seq = simple_sequence(t=227)
        assert label_of(seq, 135) == 92

    def test_last_labeled_tick(self):
        seq = simple_sequence(t=10)
        assert label_of(seq, 9) == 1

    def test_event_tick_excluded(self):
        seq = simple_sequence(t=10)
        with pytest.raises(ValueError):
            label_of(seq, 10)

    def test_out_of_range(self):
        seq = simple_sequence(t=10)
        with pytest.raises(ValueError):
            label_of(seq, 0)
        with pytest.raises(ValueError):
            label_of(seq, 11)


class TestSensorSequence:
    def test_from_observations_sorts_and_validates(self):
        obs = [Observation(np.array([float(t)]), "a", t) for t in (3, 1, 2)]
        seq = SensorSequence.from_observations(obs)
        assert seq.event_time == 3
        assert np.array_equal(seq.values[:, 0], [1.0, 2.0, 3.0])

    def test_non_contiguous_ticks_rejected(self):
        obs = [Observation(np.zeros(1), "a", t) for t in (1, 3)]
        with pytest.raises(DataError):
            SensorSequence.from_observations(obs)

    def test_nan_rejected_with_location(self):
        values = np.ones((4, 2))
        values[2, 1] = np.nan
        with pytest.raises(DataError, match="tick=3"):
            SensorSequence(values, "bad")

    def test_values_read_only(self):
        seq = simple_sequence()
        with pytest.raises(ValueError):
            seq.values[0, 0] = 5.0


class TestCollection:
    def test_dimension_mismatch(self):
        seqs = [simple_sequence(d=2), simple_sequence(d=3, instance_id="other")]
        with pytest.raises(DataError):
            LabeledCollection.from_sequences(seqs)


class TestHyperParams:
    def test_defaults_valid(self):
        h = HyperParams()
        assert h.alpha == 1.0 and h.beta == 0.1 and h.k_init == 5

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"alpha": -0.1},
            {"beta": -1.0},
            {"k_init": 0},
            {"window": 0},
            {"tol": 0.0},
        ],
    )
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            HyperParams(**kwargs)


class TestStageAssignmentPath:
    def test_monotone_enforced(self):
        StageAssignmentPath((1, 1, 2, 3, 3))
        with pytest.raises(ValueError):
            StageAssignmentPath((1, 2, 1))

    def test_one_based(self):
        with pytest.raises(ValueError):
            StageAssignmentPath((0, 1))


class TestWelfordStats:
    def test_two_point_example(self):
        stats = WelfordStats.empty(2).add(np.array([0.0, 0.0])).add(np.array([2.0, 0.0]))
        assert np.allclose(stats.mean, [1.0, 0.0])
        assert np.allclose(stats.covariance, [[1.0, 0.0], [0.0, 0.0]])

    def test_merge_equals_batch(self, rng):
        pts = rng.normal(size=(40, 3))
        merged = WelfordStats.from_points(pts[:17]).merge(WelfordStats.from_points(pts[17:]))
        batch = WelfordStats.from_points(pts)
        assert np.allclose(merged.mean, batch.mean, atol=1e-12)
        assert np.allclose(merged.covariance, batch.covariance, atol=1e-12)


class TestSerialization:
    def test_round_trip_is_bit_exact(self, rng):
        models = random_models(3, 4, rng)
        restored = ModelSet.from_json(models.to_json())
        assert restored.k == models.k
        for a, b in zip(models.stages, restored.stages):
            assert np.array_equal(a.mean, b.mean)
            assert np.array_equal(a.precision, b.precision)
            assert np.array_equal(a.link_weights, b.link_weights)
            assert a.diffusion == b.diffusion
            assert a.increment_mean == b.increment_mean
            assert a.count == b.count
            assert np.array_equal(a.sum_stats.sum, b.sum_stats.sum)
            assert np.array_equal(a.sum_stats.m2, b.sum_stats.m2)
        assert restored.hyper == models.hyper

    def test_matrices_are_flat_row_major(self, rng):
        stage = make_stage([0.0, 1.0], precision=[[2.0, 0.5], [0.5, 3.0]])
        models = ModelSet((stage,))
        obj = json.loads(models.to_json())
        assert obj["schema_version"] == 1
        assert obj["stages"][0]["precision"] == [2.0, 0.5, 0.5, 3.0]

    def test_unknown_schema_rejected(self, rng):
        obj = json.loads(random_models(1, 2, rng).to_json())
        obj["schema_version"] = 99
        with pytest.raises(Exception):
            ModelSet.from_json(json.dumps(obj))


class TestStageModel:
    def test_symmetry_required(self):
        with pytest.raises(ValueError):
            StageModel(
                mean=np.zeros(2),
                precision=np.array([[1.0, 0.2], [0.0, 1.0]]),
                link_weights=np.zeros(3),
                diffusion=1.0,
                increment_mean=1.0,
            )

    def test_link_predict_affine(self):
        stage = make_stage([0.0, 0.0], link=[2.0, 0.0, 3.0])
        assert stage.link_predict(np.array([1.0, 5.0])) == pytest.approx(5.0)
