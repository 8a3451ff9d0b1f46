"""Scale-invariant accuracy metrics and the instance-level k-fold protocol.

MAPE and RMSPE average percentage errors over every (instance, tick) pair.
The Brier score compares a predicted survival probability with the observed
outcome indicator at a horizon; the integrated score averages it over all
instances, ticks, and horizons 1..L.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .types import LabeledCollection


def _split_pairs(pred) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(list(pred), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] == 0:
        raise ValueError("expected a non-empty list of (predicted, true) pairs")
    if np.any(arr[:, 1] <= 0):
        raise ValueError("true remaining times must be strictly positive")
    return arr[:, 0], arr[:, 1]


def mape(pred: Sequence[tuple[float, float]]) -> float:
    """Mean absolute percentage error of predicted vs true remaining time."""
    hat, true = _split_pairs(pred)
    return float(np.mean(np.abs(hat - true) / true))


def rmspe(pred: Sequence[tuple[float, float]]) -> float:
    """Root-mean-square percentage error (never below MAPE)."""
    hat, true = _split_pairs(pred)
    return float(np.sqrt(np.mean(((hat - true) / true) ** 2)))


def brier(
    survival_fn: Callable[[float], float], t_event: int, t: int, tau_horizon: float
) -> float:
    """Squared gap between the survival prediction and the event indicator
    at horizon tau: (1(T > t + tau) - S(tau))^2."""
    if tau_horizon <= 0:
        raise ValueError("tau_horizon must be positive")
    indicator = 1.0 if t_event > t + tau_horizon else 0.0
    return float((indicator - float(survival_fn(tau_horizon))) ** 2)


def ibs(
    survival_fns: Sequence[Sequence[Callable[[float], float]]],
    event_times: Sequence[int],
    horizon: int,
) -> float:
    """Integrated Brier score over instances, ticks, and horizons 1..L.

    ``survival_fns[w][t-1]`` is the survival function predicted at tick t of
    stream w; ``event_times[w]`` is that stream's event tick.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if len(survival_fns) != len(event_times):
        raise ValueError("survival_fns and event_times must pair up")
    total = 0.0
    ticks = 0
    for fns, t_event in zip(survival_fns, event_times):
        for t, fn in enumerate(fns, start=1):
            total += sum(brier(fn, t_event, t, tau) for tau in range(1, horizon + 1)) / horizon
            ticks += 1
    if ticks == 0:
        raise ValueError("no ticks to score")
    return total / ticks


@dataclass(frozen=True)
class MetricReport:
    mape: float
    rmspe: float
    ibs: float | None = None
    per_instance: dict[str, tuple[float, float]] = field(default_factory=dict)
    fold_id: int = 0
    clamped_ticks: int = 0

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "mape": self.mape,
            "rmspe": self.rmspe,
            "ibs": self.ibs,
            "clamped_ticks": self.clamped_ticks,
            "per_instance": {k: list(v) for k, v in self.per_instance.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def format_table(self) -> str:
        rows = [("instance", "mape", "rmspe")]
        rows += [(k, f"{v[0]:.4f}", f"{v[1]:.4f}") for k, v in sorted(self.per_instance.items())]
        rows.append(("(all)", f"{self.mape:.4f}", f"{self.rmspe:.4f}"))
        widths = [max(len(r[i]) for r in rows) for i in range(3)]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
        if self.ibs is not None:
            lines.append(f"ibs: {self.ibs:.5f}")
        return "\n".join(lines)


def kfold_protocol(
    collection: LabeledCollection, folds: int = 5, seed: int = 0
) -> list[tuple[LabeledCollection, LabeledCollection, LabeledCollection]]:
    """Instance-level splits: each fold holds out ~1/folds of the instances
    as a test set and reserves 10% of the remainder for validation."""
    n = len(collection)
    if folds < 2:
        raise ValueError("folds must be >= 2")
    if n < folds:
        raise ValueError(f"need at least {folds} instances, got {n}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    chunks = np.array_split(order, folds)
    out = []
    for fold_id, test_idx in enumerate(chunks):
        rest = np.concatenate([c for j, c in enumerate(chunks) if j != fold_id])
        n_val = max(1, round(0.10 * rest.size))
        val_idx, train_idx = rest[:n_val], rest[n_val:]
        pick = lambda idx: LabeledCollection.from_sequences(
            collection.sequences[i] for i in sorted(idx.tolist())
        )
        out.append((pick(train_idx), pick(val_idx), pick(test_idx)))
    return out


def evaluate_model(
    models, collection: LabeledCollection, ibs_horizon: int | None = None, fold_id: int = 0
) -> MetricReport:
    """Replay every sequence through the streaming predictor and score it."""
    from .hitting import PREDICTION_FLOOR, survival
    from .streaming import replay

    if ibs_horizon is None:
        ibs_horizon = int(np.median([len(s) for s in collection.sequences]))
    per_instance = {}
    all_pairs = []
    survival_fns = []
    event_times = []
    clamped = 0
    for seq in collection.sequences:
        outputs = replay(models, seq)
        horizon = len(seq)
        pairs = [(outputs[t].point_estimate, float(horizon - (t + 1))) for t in range(horizon - 1)]
        clamped += sum(1 for out in outputs if out.point_estimate <= PREDICTION_FLOOR)
        if pairs:
            per_instance[seq.instance_id] = (mape(pairs), rmspe(pairs))
            all_pairs.extend(pairs)
        survival_fns.append(
            [(lambda params: (lambda tau: survival(params, tau)))(out.params) for out in outputs]
        )
        event_times.append(horizon)
    if not all_pairs:
        raise ValueError("no labeled ticks to score")
    return MetricReport(
        mape=mape(all_pairs),
        rmspe=rmspe(all_pairs),
        ibs=ibs(survival_fns, event_times, max(1, ibs_horizon)),
        per_instance=per_instance,
        fold_id=fold_id,
        clamped_ticks=clamped,
    )
