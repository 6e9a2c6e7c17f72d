"""Hierarchical two-stage activity recognition over streaming sensor frames.

A cheap MMG (force + piezo) model gates a costlier inertial model; fixed
sliding windows drive the eating scenario and a motion gate with linear
resampling drives the facial scenario.  Includes a from-scratch tiny-CNN
training/inference engine, synthetic session generation, a
leave-one-session-out evaluation harness, and duty-cycle power accounting.
"""

from .core import (
    EATING,
    FACIAL,
    ActivityLabel,
    PipelineConfig,
    PowerTable,
    SensorFrame,
    inertial_vector,
    label_for,
    mmg_vector,
    validate_frame,
)
from .ingest import (
    Session,
    SessionDataset,
    SyntheticProfile,
    default_profiles,
    generate_session,
    leave_one_session_out_splits,
    read_log,
    write_log,
)
from .nn import (
    ModelSpec,
    ModelWeights,
    forward,
    inertial_spec,
    load_weights,
    mmg_spec,
    param_count,
    save_weights,
)
from .pipeline import (
    EatingPipeline,
    EventPrediction,
    FacialPipeline,
    PowerReport,
    majority_vote,
    power_report,
    replay,
)
from .resample import fourier_resample, linear_resample
from .segment import MotionGate, Window, calibrate_threshold, motion_energy, sliding_windows
from .train import (
    EvalReport,
    TrainConfig,
    adadelta_step,
    backward,
    crossval,
    evaluate,
    fit,
    recall_at_precision,
    smoothed_cross_entropy,
)

__version__ = "0.1.0"
