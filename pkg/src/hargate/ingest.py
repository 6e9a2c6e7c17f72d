"""Session-structured sensor log I/O and deterministic synthetic sessions.

Log format: one CSV per session, mandatory header
``t_ms,fsr_l,fsr_r,pef_l,pef_r,ax,ay,az,qw,qx,qy,qz,label`` with one row
per frame and the integer class id in the label column.

Synthetic sessions stand in for private recordings: each class gets a
profile of per-channel burst amplitudes, an oscillation frequency, a burst
length and a noise level.  Null segments are noise-only.  Orientation is
perturbed through small rotations so quaternions stay unit-norm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .core import (
    DATA_CHANNELS,
    EATING,
    FACIAL,
    SensorFrame,
    labels_for,
    validate_frame,
)

CSV_HEADER = ("t_ms",) + DATA_CHANNELS + ("label",)

# Orientation jitter (radians) per unit of profile noise_sigma.
ROTATION_NOISE_SCALE = 0.02
# Per-channel phase offsets keep paired accel axes in quadrature so motion
# energy never collapses to zero mid-gesture.
_CHANNEL_PHASE = {
    "fsr_l": 0.0, "fsr_r": np.pi / 2, "pef_l": 0.0, "pef_r": np.pi / 2,
    "ax": 0.0, "ay": np.pi / 2, "az": np.pi / 4,
}
_ANGLE_KEYS = ("roll", "pitch", "yaw")


class SchemaError(ValueError):
    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = f" (line {line}" + (f", column {column})" if column else ")") if line else ""
        super().__init__(message + where)


class NonMonotonicTimestampError(ValueError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"t_ms not strictly increasing at line {line}")


class EmptyDatasetError(ValueError):
    pass


class UnknownClassError(ValueError):
    pass


class DurationTooShortError(ValueError):
    pass


class TooFewSessionsError(ValueError):
    pass


@dataclass
class Session:
    """One recording session: time-ordered frames with per-frame labels."""

    session_id: str
    frames: list[SensorFrame]
    labels: np.ndarray  # int64 class ids, one per frame

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.frames) != len(self.labels):
            raise ValueError("frames and labels must be the same length")


@dataclass
class SessionDataset:
    """Labeled sessions of one scenario, for leave-one-session-out splits."""

    scenario: str
    sessions: list[Session]

    def __post_init__(self):
        if not self.sessions:
            raise EmptyDatasetError("dataset needs at least one session")


@dataclass(frozen=True)
class SyntheticProfile:
    """Signal signature of one class.

    ``amplitude`` maps channel names (fsr_*, pef_*, ax/ay/az), rotation
    angles (roll/pitch/yaw, radians) or ``ramp:<accel channel>`` entries to
    burst amplitudes.  ``oscillation_hz`` drives the carrier, bursts last
    ``burst_len_s`` (sin^2 envelope), ``noise_sigma`` is the per-channel
    Gaussian noise level.
    """

    class_id: int
    amplitude: dict[str, float] = dc_field(default_factory=dict)
    oscillation_hz: float = 1.0
    burst_len_s: float = 1.0
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.burst_len_s <= 0:
            raise ValueError("burst_len_s must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        valid = set(DATA_CHANNELS[:7]) | set(_ANGLE_KEYS) | {
            f"ramp:{c}" for c in ("ax", "ay", "az")
        }
        for key in self.amplitude:
            if key not in valid:
                raise ValueError(f"unknown amplitude key {key!r}")


def default_profiles(scenario: str) -> dict[int, SyntheticProfile]:
    """Physically motivated stand-in signatures for each class.

    Activity classes light up the MMG channels (so the first stage has a
    null/activity signal) and differ on the inertial channels (so the
    second stage can tell them apart).  These are synthetic surrogates,
    not reproductions of any real recording.
    """
    if scenario == EATING:
        return {
            0: SyntheticProfile(0, {}, 1.0, 1.0, 0.2),
            # chewing: fast piezo-dominant bursts with small periodic accel
            1: SyntheticProfile(
                1,
                {"pef_l": 2.0, "pef_r": 1.8, "fsr_l": 0.5, "fsr_r": 0.4,
                 "ax": 0.5, "ay": 0.5, "roll": 0.3},
                2.0, 0.8, 0.2,
            ),
            # drinking: slow swallows, sustained pitch excursion, accel ramp
            2: SyntheticProfile(
                2,
                {"fsr_l": 1.6, "fsr_r": 1.5, "pef_l": 0.4, "pef_r": 0.3,
                 "ax": 0.5, "ay": 0.5, "ramp:az": 0.4, "pitch": 0.3},
                0.5, 2.5, 0.2,
            ),
        }
    if scenario == FACIAL:
        # every class carries a quadrature ax/ay pair so short-span motion
        # energy stays above the gate threshold for the whole gesture
        return {
            0: SyntheticProfile(0, {}, 1.0, 1.0, 0.12),
            1: SyntheticProfile(
                1, {"pef_l": 1.8, "pef_r": 1.6, "fsr_l": 0.8,
                    "ax": 0.9, "ay": 0.9, "roll": 0.3}, 0.9, 2.6, 0.12),
            2: SyntheticProfile(
                2, {"fsr_l": 1.7, "fsr_r": 1.6, "pef_l": 0.6,
                    "ax": 0.8, "ay": 0.8, "az": 0.6, "pitch": 0.3}, 1.7, 2.6, 0.12),
            3: SyntheticProfile(
                3, {"pef_l": 1.5, "fsr_r": 1.2,
                    "ax": 0.9, "ay": 0.9, "az": 0.6, "yaw": 0.25}, 2.6, 2.6, 0.12),
            4: SyntheticProfile(
                4, {"pef_l": 1.2, "pef_r": 1.3, "fsr_l": 1.2, "fsr_r": 1.1,
                    "ax": 0.8, "ay": 0.8, "pitch": 0.25, "roll": 0.25},
                3.4, 2.6, 0.12),
            5: SyntheticProfile(
                5, {"fsr_l": 1.0, "pef_r": 1.0,
                    "ax": 0.8, "ay": 0.8, "az": 0.5, "pitch": 0.45}, 0.45, 2.6, 0.12),
        }
    raise ValueError(f"unknown scenario {scenario!r}")


def _euler_to_quaternion(roll, pitch, yaw):
    """ZYX euler angles (radians) to unit quaternion components."""
    cr, sr = np.cos(roll / 2), np.sin(roll / 2)
    cp, sp = np.cos(pitch / 2), np.sin(pitch / 2)
    cy, sy = np.cos(yaw / 2), np.sin(yaw / 2)
    qw = cy * cp * cr + sy * sp * sr
    qx = cy * cp * sr - sy * sp * cr
    qy = cy * sp * cr + sy * cp * sr
    qz = sy * cp * cr - cy * sp * sr
    return qw, qx, qy, qz


def generate_session(
    profiles: dict[int, SyntheticProfile] | list[SyntheticProfile],
    schedule: list[tuple[int, float]],
    seed: int,
    session_id: str = "session",
    sample_rate_hz: float = 50.0,
    min_window_len: int = 100,
) -> Session:
    """Deterministically synthesize one labeled session.

    ``schedule`` is a list of (class_id, duration_s) segments played back to
    back.  Each scheduled class must have a profile and each segment must be
    at least ``min_window_len`` samples long.  The same seed reproduces the
    session exactly.
    """
    if isinstance(profiles, list):
        profiles = {p.class_id: p for p in profiles}
    if not schedule:
        raise DurationTooShortError("schedule is empty")
    rng = np.random.default_rng(seed)
    rate = float(sample_rate_hz)

    seg_lengths = []
    for class_id, duration_s in schedule:
        if class_id not in profiles:
            raise UnknownClassError(f"no profile for class {class_id}")
        n = int(round(duration_s * rate))
        if n < min_window_len:
            raise DurationTooShortError(
                f"segment of class {class_id} is {n} samples, need >= {min_window_len}"
            )
        seg_lengths.append(n)

    total = sum(seg_lengths)
    channels = {name: np.zeros(total) for name in DATA_CHANNELS[:7]}
    angles = {name: np.zeros(total) for name in _ANGLE_KEYS}
    labels = np.zeros(total, dtype=np.int64)

    start = 0
    for (class_id, _), n in zip(schedule, seg_lengths):
        p = profiles[class_id]
        sl = slice(start, start + n)
        tt = np.arange(n) / rate
        envelope = np.sin(np.pi * tt / p.burst_len_s) ** 2
        carrier_arg = 2.0 * np.pi * p.oscillation_hz * tt
        for key, amp in p.amplitude.items():
            if key in _ANGLE_KEYS:
                angles[key][sl] += amp * envelope
            elif key.startswith("ramp:"):
                ch = key.split(":", 1)[1]
                frac = (tt % p.burst_len_s) / p.burst_len_s
                channels[ch][sl] += amp * frac * envelope
            else:
                channels[key][sl] += amp * envelope * np.sin(
                    carrier_arg + _CHANNEL_PHASE[key]
                )
        if p.noise_sigma > 0:
            for name in DATA_CHANNELS[:7]:
                channels[name][sl] += rng.normal(0.0, p.noise_sigma, n)
            for name in _ANGLE_KEYS:
                angles[name][sl] += rng.normal(
                    0.0, p.noise_sigma * ROTATION_NOISE_SCALE, n
                )
        labels[sl] = class_id
        start += n

    qw, qx, qy, qz = _euler_to_quaternion(
        angles["roll"], angles["pitch"], angles["yaw"]
    )
    t_ms = np.round(np.arange(total) * 1000.0 / rate).astype(np.int64)
    frames = [
        validate_frame(
            SensorFrame(
                t_ms=int(t_ms[i]),
                fsr_l=float(channels["fsr_l"][i]),
                fsr_r=float(channels["fsr_r"][i]),
                pef_l=float(channels["pef_l"][i]),
                pef_r=float(channels["pef_r"][i]),
                ax=float(channels["ax"][i]),
                ay=float(channels["ay"][i]),
                az=float(channels["az"][i]),
                qw=float(qw[i]),
                qx=float(qx[i]),
                qy=float(qy[i]),
                qz=float(qz[i]),
            )
        )
        for i in range(total)
    ]
    return Session(session_id=session_id, frames=frames, labels=labels)


def write_session_csv(session: Session, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for frame, label in zip(session.frames, session.labels):
            row = [frame.t_ms]
            row += [repr(getattr(frame, name)) for name in DATA_CHANNELS]
            row.append(int(label))
            writer.writerow(row)


def read_session_csv(path, scenario: str) -> Session:
    path = Path(path)
    valid_labels = set(labels_for(scenario))
    frames: list[SensorFrame] = []
    labels: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptyDatasetError(f"{path} is empty")
        if tuple(header) != CSV_HEADER:
            raise SchemaError(f"bad header in {path}", line=1)
        prev_t = None
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise SchemaError(
                    f"expected {len(CSV_HEADER)} fields, got {len(row)}", line=lineno
                )
            try:
                t_ms = int(row[0])
            except ValueError:
                raise SchemaError("t_ms is not an integer", line=lineno, column="t_ms")
            values = {}
            for name, cell in zip(DATA_CHANNELS, row[1:12]):
                try:
                    values[name] = float(cell)
                except ValueError:
                    raise SchemaError("not a real number", line=lineno, column=name)
            try:
                label = int(row[12])
            except ValueError:
                raise SchemaError("label is not an integer", line=lineno, column="label")
            if label not in valid_labels:
                raise SchemaError(
                    f"label {label} not in the {scenario} label set",
                    line=lineno, column="label",
                )
            if prev_t is not None and t_ms <= prev_t:
                raise NonMonotonicTimestampError(lineno)
            prev_t = t_ms
            frames.append(validate_frame(SensorFrame(t_ms=t_ms, **values)))
            labels.append(label)
    if not frames:
        raise EmptyDatasetError(f"{path} has a header but no frames")
    return Session(session_id=path.stem, frames=frames, labels=np.array(labels))


def write_log(dataset: SessionDataset, directory) -> list[Path]:
    """One CSV per session, named <session_id>.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for session in dataset.sessions:
        path = directory / f"{session.session_id}.csv"
        write_session_csv(session, path)
        paths.append(path)
    return paths


def read_log(directory, scenario: str) -> SessionDataset:
    """Read every <session_id>.csv under directory, sorted by name."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.csv"))
    if not paths:
        raise EmptyDatasetError(f"no session CSVs in {directory}")
    sessions = [read_session_csv(p, scenario) for p in paths]
    return SessionDataset(scenario=scenario, sessions=sessions)


def leave_one_session_out_splits(
    dataset: SessionDataset,
) -> list[tuple[list[Session], Session]]:
    """One fold per session; each session is the test side exactly once."""
    sessions = dataset.sessions
    if len(sessions) < 2:
        raise TooFewSessionsError("leave-one-session-out needs >= 2 sessions")
    return [
        ([s for j, s in enumerate(sessions) if j != i], sessions[i])
        for i in range(len(sessions))
    ]
