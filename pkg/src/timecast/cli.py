"""Command-line surface: train, streaming replay, evaluation, synthetic data
and curve export.

Exit codes: 0 success, 2 usage error (argparse), 3 malformed data or schema,
4 solver non-convergence, 1 anything unexpected.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .data import (
    DatasetSpec,
    SyntheticSpec,
    auto_window,
    generate_synthetic,
    load_collection,
    load_stream_records,
    save_collection,
)
from .hitting import FirstHittingParams, event_density, survival
from .metrics import evaluate_model, kfold_protocol
from .segmentation import learn
from .streaming import StreamState, adaptive_predict, online_model_update
from .types import ConvergenceError, DataError, HyperParams, ModelSet


def _write_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _add_data_arg(p: argparse.ArgumentParser, name: str = "--data") -> None:
    p.add_argument(name, required=True, help="long CSV: instance_id,tick,<sensors...>")
    p.add_argument("--no-normalize", action="store_true", help="skip per-sequence z-normalization")
    p.add_argument("--event-time-column", default=None)


def _dataset_spec(path: str, args) -> DatasetSpec:
    return DatasetSpec(
        path=path,
        normalize=not args.no_normalize,
        event_time_column=args.event_time_column,
    )


def _cmd_train(args) -> int:
    collection = load_collection(_dataset_spec(args.data, args))
    if args.window == "auto":
        window = auto_window(collection)
    else:
        window = int(args.window)
    hyper = HyperParams(
        alpha=args.alpha,
        beta=args.beta,
        k_init=args.k,
        window=window,
        max_iter=args.max_iter,
        tol=args.tol,
    )
    models, _, report = learn(
        collection, hyper, seed=args.seed, prune_empty_stages=not args.no_prune_empty_stages
    )
    _write_atomic(args.out, models.to_json())
    if args.report:
        _write_atomic(args.report, report.to_json())
    print(
        f"trained K={models.k} window={window} iterations={report.iterations} "
        f"converged={report.converged} objective={report.objective_trace[-1]:.4f}"
    )
    return 0


def _load_model(path: str) -> ModelSet:
    with open(path) as fh:
        return ModelSet.from_json(fh.read())


def _is_ndjson(path: str) -> bool:
    if path.endswith((".ndjson", ".jsonl")):
        return True
    with open(path) as fh:
        head = fh.read(1)
    return head == "{"


def _cmd_predict(args) -> int:
    models = _load_model(args.model)
    if _is_ndjson(args.stream):
        collection = load_stream_records(args.stream, normalize=not args.no_normalize)
    else:
        collection = load_collection(_dataset_spec(args.stream, args))
    grid = None
    if args.survival_grid:
        horizon = max(len(s) for s in collection.sequences)
        grid = np.linspace(1.0, float(horizon), args.survival_grid)

    lines = []
    for seq in collection.sequences:
        state = StreamState()
        for t in range(len(seq)):
            output, state = adaptive_predict(state, seq.values[t], models, grid)
            record = {"instance_id": seq.instance_id, "k": models.k, **output.to_dict()}
            lines.append(json.dumps(record))
        if args.online_update:
            models, report = online_model_update(models, seq, seed=args.seed)
            lines.append(
                json.dumps({"instance_id": seq.instance_id, "online_update": report.to_dict()})
            )
    _write_atomic(args.out, "\n".join(lines) + "\n")
    if args.out_model:
        _write_atomic(args.out_model, models.to_json())
    print(f"wrote {len(lines)} records to {args.out} (K={models.k})")
    return 0


def _cmd_evaluate(args) -> int:
    models = _load_model(args.model)
    collection = load_collection(_dataset_spec(args.data, args))
    folds = kfold_protocol(collection, folds=args.folds, seed=args.seed)
    reports = [
        evaluate_model(models, test, ibs_horizon=args.ibs_horizon, fold_id=i)
        for i, (_, _, test) in enumerate(folds)
    ]
    summary = {
        "folds": [r.to_dict() for r in reports],
        "mean_mape": float(np.mean([r.mape for r in reports])),
        "mean_rmspe": float(np.mean([r.rmspe for r in reports])),
        "mean_ibs": float(np.mean([r.ibs for r in reports])),
    }
    _write_atomic(args.out, json.dumps(summary))
    for r in reports:
        print(f"fold {r.fold_id}: mape={r.mape:.4f} rmspe={r.rmspe:.4f} ibs={r.ibs:.5f}")
    print(
        f"mean: mape={summary['mean_mape']:.4f} rmspe={summary['mean_rmspe']:.4f} "
        f"ibs={summary['mean_ibs']:.5f}"
    )
    return 0


def _cmd_synth(args) -> int:
    with open(args.spec) as fh:
        spec = SyntheticSpec.from_json(fh.read())
    collection, truths = generate_synthetic(spec)
    save_collection(collection, args.out)
    truth = {
        "stages": {seq.instance_id: t.tolist() for seq, t in zip(collection.sequences, truths)},
        "event_times": {seq.instance_id: len(seq) for seq in collection.sequences},
    }
    _write_atomic(args.truth, json.dumps(truth))
    print(f"wrote {len(collection)} instances, {collection.total_ticks()} ticks to {args.out}")
    return 0


def _cmd_plot_data(args) -> int:
    curves = []
    with open(args.preds) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            if "mu" not in record:
                continue  # online-update report lines carry no parameters
            params = FirstHittingParams(record["mu"], record["lambda"])
            top = args.max_tau if args.max_tau else 3.0 * params.mu_ig
            taus = np.linspace(top / args.points, top, args.points)
            curves.append(
                {
                    "instance_id": record.get("instance_id"),
                    "tick": record["tick"],
                    "stage": record["stage"],
                    "tau": taus.tolist(),
                    "density": np.asarray(event_density(params, taus)).tolist(),
                    "survival": np.asarray(survival(params, taus)).tolist(),
                }
            )
    _write_atomic(args.out, json.dumps(curves))
    print(f"wrote {len(curves)} curves to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timecast")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="learn a stage model set from a labeled collection")
    _add_data_arg(p)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--window", default="auto", help="sliding-window width in ticks, or 'auto'")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--no-prune-empty-stages", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None, help="optional FitReport JSON path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("predict", help="replay streams tick by tick")
    p.add_argument("--model", required=True)
    _add_data_arg(p, "--stream")
    p.add_argument("--out", required=True, help="NDJSON output, one record per tick")
    p.add_argument("--online-update", action="store_true", help="grow the model at event ticks")
    p.add_argument("--out-model", default=None, help="write the (possibly grown) model here")
    p.add_argument("--survival-grid", type=int, default=0, help="sample the survival curve at N points")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_predict)

    p = sub.add_parser("evaluate", help="score a model over instance-level folds")
    p.add_argument("--model", required=True)
    _add_data_arg(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ibs-horizon", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("synth", help="generate a synthetic labeled collection")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    p.add_argument("--out", required=True, help="CSV output path")
    p.add_argument("--truth", required=True, help="ground-truth stage paths JSON")
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("plot-data", help="sample density/survival curves from predictions")
    p.add_argument("--preds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--max-tau", type=float, default=None)
    p.set_defaults(fn=_cmd_plot_data)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
