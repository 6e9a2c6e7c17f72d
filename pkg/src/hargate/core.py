"""Shared domain types for the two-stage wearable recognition stack.

A frame is one ~50 Hz sample carrying four mechanomyography channels (two
force-sensitive resistors, two piezo films) plus linear acceleration and an
orientation quaternion.  Everything downstream (windowing, the tiny CNNs,
the streaming pipelines) consumes these types; they are immutable values and
safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

EATING = "eating"
FACIAL = "facial"
SCENARIOS = (EATING, FACIAL)

# class_id -> name; 0 is always the null/background class
EATING_LABELS = {0: "null", 1: "eating", 2: "drinking"}
FACIAL_LABELS = {
    0: "null",
    1: "joy_surprise",
    2: "anger_disgust",
    3: "winking",
    4: "fear",
    5: "taking_pill",
}

# Canonical channel order; part of the CSV and weight-file contracts.
MMG_CHANNELS = ("fsr_l", "fsr_r", "pef_l", "pef_r")
INERTIAL_CHANNELS = ("ax", "ay", "az", "qw", "qx", "qy", "qz")
DATA_CHANNELS = MMG_CHANNELS + INERTIAL_CHANNELS

_QUAT_ZERO_CUTOFF = 1e-9
# Skip renormalization when already unit within this slack so that
# validation is exactly idempotent and round trips are byte-stable.
_QUAT_EXACT_TOL = 1e-12


class NonFiniteValueError(ValueError):
    """A frame channel holds NaN or Inf."""

    def __init__(self, channel: str):
        self.channel = channel
        super().__init__(f"non-finite value in channel {channel!r}")


class ZeroQuaternionError(ValueError):
    """All four quaternion components are below the zero cutoff."""


@dataclass(frozen=True)
class SensorFrame:
    """One sensor sample: timestamp, 4 MMG channels, 7 inertial channels."""

    t_ms: int
    fsr_l: float = 0.0
    fsr_r: float = 0.0
    pef_l: float = 0.0
    pef_r: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    az: float = 0.0
    qw: float = 1.0
    qx: float = 0.0
    qy: float = 0.0
    qz: float = 0.0


def validate_frame(frame: SensorFrame) -> SensorFrame:
    """Check finiteness and return the frame with a unit-norm quaternion.

    Raises NonFiniteValueError naming the offending channel, or
    ZeroQuaternionError when the quaternion is too small to carry any
    orientation (renormalizing sensor dropout noise would invent one).
    """
    for name in DATA_CHANNELS:
        if not math.isfinite(getattr(frame, name)):
            raise NonFiniteValueError(name)
    norm = math.sqrt(frame.qw**2 + frame.qx**2 + frame.qy**2 + frame.qz**2)
    if norm < _QUAT_ZERO_CUTOFF:
        raise ZeroQuaternionError("quaternion norm below 1e-9")
    if abs(norm - 1.0) <= _QUAT_EXACT_TOL:
        return frame
    return replace(
        frame,
        qw=frame.qw / norm,
        qx=frame.qx / norm,
        qy=frame.qy / norm,
        qz=frame.qz / norm,
    )


def mmg_vector(frame: SensorFrame) -> np.ndarray:
    """4-vector [fsr_l, fsr_r, pef_l, pef_r]."""
    return np.array([frame.fsr_l, frame.fsr_r, frame.pef_l, frame.pef_r])


def inertial_vector(frame: SensorFrame) -> np.ndarray:
    """7-vector [ax, ay, az, qw, qx, qy, qz]."""
    return np.array(
        [frame.ax, frame.ay, frame.az, frame.qw, frame.qx, frame.qy, frame.qz]
    )


def frame_from_vectors(t_ms: int, mmg: np.ndarray, inertial: np.ndarray) -> SensorFrame:
    """Inverse of mmg_vector/inertial_vector: reassemble a frame."""
    if len(mmg) != 4 or len(inertial) != 7:
        raise ValueError("expected a 4-vector and a 7-vector")
    return SensorFrame(
        t_ms=t_ms,
        fsr_l=float(mmg[0]),
        fsr_r=float(mmg[1]),
        pef_l=float(mmg[2]),
        pef_r=float(mmg[3]),
        ax=float(inertial[0]),
        ay=float(inertial[1]),
        az=float(inertial[2]),
        qw=float(inertial[3]),
        qx=float(inertial[4]),
        qy=float(inertial[5]),
        qz=float(inertial[6]),
    )


@dataclass(frozen=True)
class ActivityLabel:
    scenario: str
    class_id: int
    name: str


def labels_for(scenario: str) -> dict[int, str]:
    if scenario == EATING:
        return EATING_LABELS
    if scenario == FACIAL:
        return FACIAL_LABELS
    raise ValueError(f"unknown scenario {scenario!r}")


def label_for(scenario: str, class_id: int) -> ActivityLabel:
    table = labels_for(scenario)
    if class_id not in table:
        raise ValueError(f"class {class_id} not in {scenario} label set")
    return ActivityLabel(scenario, class_id, table[class_id])


def event_class_count(scenario: str) -> int:
    """Number of event-level classes including null (eating 3, facial 6)."""
    return len(labels_for(scenario))


def stage2_class_ids(scenario: str) -> tuple[int, ...]:
    """Non-null class ids handled by the second-stage inertial model."""
    return tuple(c for c in labels_for(scenario) if c != 0)


@dataclass(frozen=True)
class PowerTable:
    """Wattage per duty state, overridable per deployment."""

    facial_idle_w: float = 0.46
    facial_mmg_w: float = 0.55
    facial_both_w: float = 0.65
    eating_mmg_w: float = 0.5489
    eating_both_w: float = 0.5988

    def __post_init__(self):
        if not (0.0 < self.facial_idle_w <= self.facial_mmg_w <= self.facial_both_w):
            raise ValueError("facial power levels must satisfy 0 < idle <= mmg <= both")
        if not (0.0 < self.eating_mmg_w <= self.eating_both_w):
            raise ValueError("eating power levels must satisfy 0 < mmg <= both")


@dataclass(frozen=True)
class PipelineConfig:
    """Sampling, window geometry, gating and voting knobs for one run."""

    scenario: str
    sample_rate_hz: float = 50.0
    window_len: int = 100
    window_step: int = 25
    motion_threshold: float | None = None  # None: calibrate from leading rest data
    motion_span: int = 6
    vote_depth: int = 5
    power_table: PowerTable = field(default_factory=PowerTable)
    rng_seed: int = 0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        if self.window_len < 1 or self.window_step < 1:
            raise ValueError("window_len and window_step must be >= 1")
        if self.window_step > self.window_len:
            raise ValueError("window_step must not exceed window_len")
        if self.vote_depth < 1:
            raise ValueError("vote_depth must be >= 1")
        if self.motion_span < 1:
            raise ValueError("motion_span must be >= 1")
        if self.motion_threshold is not None and self.motion_threshold < 0:
            raise ValueError("motion_threshold must be nonnegative")
