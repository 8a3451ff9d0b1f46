import json

import numpy as np
import pytest

from timecast.cli import main

SPEC = {
    "n_instances": 8,
    "noise_seed": 5,
    "stages": [
        {"mean": [0, 0], "precision": [[1, 0], [0, 1]]},
        {"mean": [5, 5], "precision": [[2, 0], [0, 2]]},
    ],
    "stage_durations": [[25, 35], [25, 35]],
}


@pytest.fixture
def workspace(tmp_path):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(SPEC))
    data = tmp_path / "data.csv"
    truth = tmp_path / "truth.json"
    assert main(["synth", "--spec", str(spec_path), "--out", str(data), "--truth", str(truth)]) == 0
    return tmp_path


def test_synth_outputs(workspace):
    truth = json.loads((workspace / "truth.json").read_text())
    assert len(truth["stages"]) == 8
    header = (workspace / "data.csv").read_text().splitlines()[0]
    assert header == "instance_id,tick,sensor_1,sensor_2"


def test_train_predict_evaluate_plot(workspace):
    model = workspace / "model.json"
    report = workspace / "report.json"
    rc = main(
        [
            "train",
            "--data", str(workspace / "data.csv"),
            "--alpha", "1.0", "--beta", "0.1", "--k", "2",
            "--window", "1", "--seed", "0",
            "--out", str(model), "--report", str(report),
        ]
    )
    assert rc == 0
    fit = json.loads(report.read_text())
    assert fit["converged"]
    trace = fit["objective_trace"]
    assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))

    preds = workspace / "preds.ndjson"
    rc = main(
        [
            "predict",
            "--model", str(model),
            "--stream", str(workspace / "data.csv"),
            "--out", str(preds),
            "--survival-grid", "5",
        ]
    )
    assert rc == 0
    lines = [json.loads(l) for l in preds.read_text().splitlines() if l]
    assert {"instance_id", "tick", "stage", "mu", "lambda", "point_estimate"} <= set(lines[0])

    metrics_out = workspace / "metrics.json"
    rc = main(
        [
            "evaluate",
            "--model", str(model),
            "--data", str(workspace / "data.csv"),
            "--folds", "4", "--seed", "0",
            "--out", str(metrics_out),
        ]
    )
    assert rc == 0
    summary = json.loads(metrics_out.read_text())
    assert len(summary["folds"]) == 4
    assert summary["mean_mape"] >= 0.0

    curves = workspace / "curves.json"
    rc = main(["plot-data", "--preds", str(preds), "--out", str(curves), "--points", "10"])
    assert rc == 0
    parsed = json.loads(curves.read_text())
    assert len(parsed[0]["tau"]) == 10
    assert all(0.0 <= v <= 1.0 for v in parsed[0]["survival"])


def test_train_determinism(workspace):
    args = [
        "train",
        "--data", str(workspace / "data.csv"),
        "--k", "2", "--window", "1", "--seed", "7",
    ]
    m1, m2 = workspace / "m1.json", workspace / "m2.json"
    assert main(args + ["--out", str(m1)]) == 0
    assert main(args + ["--out", str(m2)]) == 0
    assert m1.read_text() == m2.read_text()


def test_predict_online_update_grows_model(workspace, tmp_path):
    model = workspace / "model.json"
    main(
        [
            "train",
            "--data", str(workspace / "data.csv"),
            "--k", "2", "--window", "1", "--seed", "0",
            "--out", str(model),
        ]
    )
    # streams containing a regime absent from training
    spec = dict(SPEC)
    spec["stages"] = SPEC["stages"] + [{"mean": [-6, 3], "precision": [[1, 0], [0, 1]]}]
    spec["stage_durations"] = SPEC["stage_durations"] + [[25, 35]]
    spec["n_instances"] = 5
    spec["noise_seed"] = 99
    spec_path = tmp_path / "new_spec.json"
    spec_path.write_text(json.dumps(spec))
    stream_csv = tmp_path / "streams.csv"
    main(["synth", "--spec", str(spec_path), "--out", str(stream_csv), "--truth", str(tmp_path / "t.json")])

    out_model = tmp_path / "grown.json"
    preds = tmp_path / "preds.ndjson"
    rc = main(
        [
            "predict",
            "--model", str(model),
            "--stream", str(stream_csv),
            "--out", str(preds),
            "--online-update",
            "--out-model", str(out_model),
            "--seed", "0",
        ]
    )
    assert rc == 0
    grown = json.loads(out_model.read_text())
    assert len(grown["stages"]) >= 2
    update_lines = [
        json.loads(l) for l in preds.read_text().splitlines() if "online_update" in l
    ]
    assert len(update_lines) == 5


def test_bad_data_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("instance_id,tick,temp\na,1,nan\n")
    rc = main(["train", "--data", str(bad), "--out", str(tmp_path / "m.json")])
    assert rc == 3


def test_missing_file_exit_code(tmp_path):
    rc = main(["train", "--data", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m.json")])
    assert rc == 3


def test_predict_accepts_ndjson_stream(workspace, tmp_path):
    model = workspace / "model.json"
    main(
        [
            "train",
            "--data", str(workspace / "data.csv"),
            "--k", "2", "--window", "1", "--seed", "0",
            "--out", str(model),
        ]
    )
    records = []
    rng = np.random.default_rng(0)
    for t in range(1, 21):
        vals = rng.normal(size=2).tolist()
        records.append(json.dumps({"instance_id": "live", "tick": t, "values": vals}))
    stream = tmp_path / "live.ndjson"
    stream.write_text("\n".join(records) + "\n")
    preds = tmp_path / "live_preds.ndjson"
    rc = main(["predict", "--model", str(model), "--stream", str(stream), "--out", str(preds)])
    assert rc == 0
    lines = [json.loads(l) for l in preds.read_text().splitlines() if l]
    assert len(lines) == 20


def test_streaming_final_stage_matches_batch_path(workspace, tmp_path):
    from timecast import ModelSet, assign_stages_dp, load_collection
    from timecast.data import DatasetSpec

    model = workspace / "model0.json"
    rc = main(
        [
            "train",
            "--data", str(workspace / "data.csv"),
            "--k", "2", "--window", "1", "--seed", "0", "--beta", "0.0",
            "--out", str(model),
        ]
    )
    assert rc == 0
    preds = tmp_path / "train_preds.ndjson"
    main(["predict", "--model", str(model), "--stream", str(workspace / "data.csv"), "--out", str(preds)])
    final_stage = {}
    for line in preds.read_text().splitlines():
        record = json.loads(line)
        final_stage[record["instance_id"]] = record["stage"]

    models = ModelSet.from_json(model.read_text())
    collection = load_collection(DatasetSpec(str(workspace / "data.csv")))
    for seq in collection.sequences:
        batch = assign_stages_dp(seq, models, beta=0.0)
        assert final_stage[seq.instance_id] == batch.stages[-1]
