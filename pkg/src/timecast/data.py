"""Data loading, preprocessing and synthetic generation.

The on-disk format is long CSV with a header row:

    instance_id,tick,<sensor_1>,...,<sensor_d>[,event_time]

one row per (instance, tick). Ticks must be contiguous 1..T_v per instance
once sorted; the event is at the last tick unless an explicit event_time
column confirms it. No imputation: a NaN cell is an error that names the
instance, tick and column.
"""
from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass

import numpy as np

from .types import DataError, LabeledCollection, SchemaError, SensorSequence


class ConstantSensorWarning(UserWarning):
    """A sensor had zero variance and was mapped to all-zeros by z-normalization."""


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    instance_column: str = "instance_id"
    tick_column: str = "tick"
    sensor_columns: tuple[str, ...] | None = None  # None: every remaining column
    event_time_column: str | None = None
    normalize: bool = True


def load_collection(spec: DatasetSpec) -> LabeledCollection:
    """Read one collection from CSV; see the module docstring for the schema."""
    with open(spec.path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{spec.path}: empty file") from None
        rows = list(reader)

    col_index = {name: i for i, name in enumerate(header)}
    for required in (spec.instance_column, spec.tick_column):
        if required not in col_index:
            raise SchemaError(f"{spec.path}: missing column {required!r}")
    if spec.event_time_column is not None and spec.event_time_column not in col_index:
        raise SchemaError(f"{spec.path}: missing column {spec.event_time_column!r}")

    if spec.sensor_columns is None:
        reserved = {spec.instance_column, spec.tick_column, spec.event_time_column}
        sensors = [c for c in header if c not in reserved]
    else:
        sensors = list(spec.sensor_columns)
        for c in sensors:
            if c not in col_index:
                raise SchemaError(f"{spec.path}: missing sensor column {c!r}")
    if not sensors:
        raise SchemaError(f"{spec.path}: no sensor columns")

    by_instance: dict[str, list[tuple[int, np.ndarray, float | None]]] = {}
    order: list[str] = []
    for row_no, row in enumerate(rows, start=2):
        if not row:
            continue
        instance = row[col_index[spec.instance_column]]
        try:
            tick = int(row[col_index[spec.tick_column]])
        except ValueError:
            raise DataError(f"{spec.path}:{row_no}: non-integer tick for instance {instance!r}")
        values = np.empty(len(sensors))
        for j, c in enumerate(sensors):
            cell = row[col_index[c]]
            try:
                v = float(cell)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                raise DataError(
                    f"{spec.path}: bad value {cell!r} (instance={instance!r}, tick={tick}, column={c!r})"
                )
            values[j] = v
        event = None
        if spec.event_time_column is not None:
            event = float(row[col_index[spec.event_time_column]])
        if instance not in by_instance:
            order.append(instance)
        by_instance.setdefault(instance, []).append((tick, values, event))

    sequences = []
    for instance in order:
        entries = sorted(by_instance[instance], key=lambda e: e[0])
        ticks = [e[0] for e in entries]
        if ticks != list(range(1, len(entries) + 1)):
            bad = next((t for i, t in enumerate(ticks) if t != i + 1), ticks[-1])
            raise DataError(
                f"{spec.path}: ticks must be contiguous 1..T for instance {instance!r} "
                f"(offending tick {bad})"
            )
        if spec.event_time_column is not None:
            declared = {e[2] for e in entries}
            if declared != {float(len(entries))}:
                raise DataError(
                    f"{spec.path}: event_time must equal the last tick {len(entries)} "
                    f"for instance {instance!r}, got {sorted(declared)}"
                )
        seq = SensorSequence(np.stack([e[1] for e in entries]), instance)
        if spec.normalize:
            seq = znormalize(seq)
        sequences.append(seq)
    if not sequences:
        raise DataError(f"{spec.path}: no data rows")
    return LabeledCollection.from_sequences(sequences)


def load_stream_records(path: str, normalize: bool = True) -> LabeledCollection:
    """Read a streaming replay file: newline-delimited JSON records

        {"instance_id": "engine-1", "tick": 3, "values": [v1, ..., vd]}

    Ticks must be contiguous 1..T_v per instance; instances are replayed in
    order of first appearance.
    """
    by_instance: dict[str, list[tuple[int, np.ndarray]]] = {}
    order: list[str] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{line_no}: invalid JSON record ({exc})") from None
            for key in ("instance_id", "tick", "values"):
                if key not in record:
                    raise SchemaError(f"{path}:{line_no}: missing field {key!r}")
            instance = str(record["instance_id"])
            values = np.asarray(record["values"], dtype=float)
            if not np.all(np.isfinite(values)):
                raise DataError(
                    f"{path}:{line_no}: non-finite value (instance={instance!r}, tick={record['tick']})"
                )
            if instance not in by_instance:
                order.append(instance)
            by_instance.setdefault(instance, []).append((int(record["tick"]), values))
    sequences = []
    for instance in order:
        entries = sorted(by_instance[instance], key=lambda e: e[0])
        ticks = [e[0] for e in entries]
        if ticks != list(range(1, len(entries) + 1)):
            raise DataError(f"{path}: ticks must be contiguous 1..T for instance {instance!r}")
        seq = SensorSequence(np.stack([e[1] for e in entries]), instance)
        if normalize:
            seq = znormalize(seq)
        sequences.append(seq)
    if not sequences:
        raise DataError(f"{path}: no records")
    return LabeledCollection.from_sequences(sequences)


def save_collection(collection: LabeledCollection, path: str) -> None:
    d = collection.dimension
    header = ["instance_id", "tick"] + [f"sensor_{j + 1}" for j in range(d)]
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for seq in collection.sequences:
            for t in range(len(seq)):
                writer.writerow([seq.instance_id, t + 1] + [repr(float(v)) for v in seq.values[t]])
    os.replace(tmp, path)


def znormalize(seq: SensorSequence) -> SensorSequence:
    """Per-sequence, per-sensor z-normalization with the ML (1/T) variance.

    Zero-variance sensors map to all-zeros and raise ConstantSensorWarning.
    """
    if len(seq) < 2:
        raise DataError(f"z-normalization needs T >= 2 (instance={seq.instance_id!r})")
    values = np.asarray(seq.values, dtype=float)
    mean = values.mean(axis=0)
    std = values.std(axis=0)  # ML denominator
    flat = np.flatnonzero(std == 0.0)
    if flat.size:
        warnings.warn(
            f"constant sensors {flat.tolist()} in instance {seq.instance_id!r} mapped to zeros",
            ConstantSensorWarning,
            stacklevel=2,
        )
    safe = np.where(std == 0.0, 1.0, std)
    out = (values - mean) / safe
    out[:, flat] = 0.0
    return SensorSequence(out, seq.instance_id)


def window_features(values: np.ndarray, m: int) -> np.ndarray:
    """Flattened sliding-window features [x_{t-m+1}, ..., x_t] per tick.

    Ticks before m repeat the first observation on the left, so every tick
    yields a feature and the output length equals the input length.
    """
    if m < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(values, dtype=float)
    if m == 1:
        return np.ascontiguousarray(values)
    t, d = values.shape
    padded = np.vstack([np.repeat(values[:1], m - 1, axis=0), values])
    view = np.lib.stride_tricks.sliding_window_view(padded, m, axis=0)  # (t, d, m)
    return np.ascontiguousarray(view.transpose(0, 2, 1).reshape(t, m * d))


def windowize(seq: SensorSequence, m: int) -> np.ndarray:
    return window_features(seq.values, m)


def auto_window(collection: LabeledCollection, fraction: float = 0.10) -> int:
    """Default sliding-window width: 10% of the mean sequence length."""
    mean_t = np.mean([len(s) for s in collection.sequences])
    return max(1, round(fraction * mean_t))


@dataclass(frozen=True)
class SyntheticStage:
    mean: np.ndarray
    precision: np.ndarray
    link_weights: np.ndarray | None = None
    sigma: float | None = None

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        prec = np.asarray(self.precision, dtype=float)
        if prec.shape != (mean.shape[0], mean.shape[0]):
            raise ValueError("precision shape must match mean length")
        if not np.allclose(prec, prec.T):
            raise ValueError("precision must be symmetric")
        if np.linalg.eigvalsh(prec).min() <= 0:
            raise ValueError("precision must be positive-definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)


@dataclass(frozen=True)
class SyntheticSpec:
    n_instances: int
    stages: tuple[SyntheticStage, ...]
    stage_durations: tuple[tuple[int, int], ...]  # inclusive tick-count ranges
    noise_seed: int = 0

    def __post_init__(self):
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")
        if not self.stages:
            raise ValueError("need at least one stage")
        if len(self.stage_durations) != len(self.stages):
            raise ValueError("stage_durations must pair with stages")
        for lo, hi in self.stage_durations:
            if lo < 1 or hi < lo:
                raise ValueError("durations must be positive ranges")

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        obj = json.loads(text)
        stages = tuple(
            SyntheticStage(
                mean=np.asarray(s["mean"], dtype=float),
                precision=np.asarray(s["precision"], dtype=float),
                link_weights=np.asarray(s["link_weights"], dtype=float)
                if s.get("link_weights") is not None
                else None,
                sigma=s.get("sigma"),
            )
            for s in obj["stages"]
        )
        durations = tuple((int(lo), int(hi)) for lo, hi in obj["stage_durations"])
        return cls(int(obj["n_instances"]), stages, durations, int(obj.get("noise_seed", 0)))


def generate_synthetic(spec: SyntheticSpec) -> tuple[LabeledCollection, list[np.ndarray]]:
    """Sample per-stage durations, then observations from each stage's
    Gaussian; returns the collection and the true per-tick stage paths."""
    rng = np.random.default_rng(spec.noise_seed)
    covs = [np.linalg.inv(s.precision) for s in spec.stages]
    chols = [np.linalg.cholesky(c) for c in covs]
    sequences, truths = [], []
    for v in range(spec.n_instances):
        blocks, truth = [], []
        for k, (stage, (lo, hi)) in enumerate(zip(spec.stages, spec.stage_durations)):
            duration = int(rng.integers(lo, hi + 1))
            z = rng.standard_normal((duration, stage.mean.shape[0]))
            blocks.append(stage.mean + z @ chols[k].T)
            truth.extend([k + 1] * duration)
        sequences.append(SensorSequence(np.vstack(blocks), f"synthetic_{v:03d}"))
        truths.append(np.asarray(truth, dtype=int))
    return LabeledCollection.from_sequences(sequences), truths
