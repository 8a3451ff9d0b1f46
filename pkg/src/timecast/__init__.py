"""Streaming time-to-event prediction over multi-sensor sequences.

Sequences are segmented into monotonically ordered stages, each pairing a
sparse Gaussian graphical descriptor with a Wiener-process first-hitting
predictor; streams are replayed tick by tick with online model growth.
"""
from ._dp import backend as dp_backend
from .data import (
    DatasetSpec,
    SyntheticSpec,
    SyntheticStage,
    auto_window,
    generate_synthetic,
    load_collection,
    load_stream_records,
    save_collection,
    window_features,
    windowize,
    znormalize,
)
from .glasso import (
    EmpiricalStats,
    GlassoConfig,
    empirical_stats,
    fit_precision,
    gaussian_loglik,
    stage_descriptor_objective,
)
from .hitting import (
    FirstHittingParams,
    LinkFit,
    event_density,
    fit_diffusion,
    fit_link,
    hitting_params,
    predicted_time,
    predictor_loglik,
    survival,
)
from .metrics import MetricReport, brier, evaluate_model, ibs, kfold_protocol, mape, rmspe
from .segmentation import (
    DpTable,
    FitReport,
    assign_stages_dp,
    initialize,
    learn,
    point_cost,
    total_objective,
    update_stage_models,
)
from .streaming import (
    PredictionOutput,
    StreamState,
    UpdateReport,
    adaptive_predict,
    online_model_update,
    replay,
    stream_mape,
    welford_update,
)
from .types import (
    ConvergenceError,
    DataError,
    DegenerateStageError,
    HyperParams,
    LabeledCollection,
    ModelSet,
    Observation,
    SchemaError,
    SensorSequence,
    StageAssignmentPath,
    StageModel,
    WelfordStats,
    label_of,
)

__version__ = "0.1.0"
