"""Turns a frame stream into classifier inputs.

The eating scenario uses fixed sliding windows (2 s window, 0.5 s step at
50 Hz).  The facial scenario gates on short-span acceleration energy and
collects a variable-length window for as long as motion persists.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import SensorFrame, inertial_vector, mmg_vector

DEFAULT_SPAN = 6
# Variable windows shorter than this are discarded as spurious gate blips.
MIN_GESTURE_FRAMES = 10


class StreamTooShortError(ValueError):
    """Stream holds fewer frames than one window (or calibration needs)."""


class WrongSpanError(ValueError):
    """motion_energy was handed a slice of the wrong length."""


@dataclass(frozen=True)
class Window:
    """A contiguous run of frames with its source time interval."""

    frames: tuple[SensorFrame, ...]
    start_ms: int
    end_ms: int

    @classmethod
    def from_frames(cls, frames) -> "Window":
        frames = tuple(frames)
        if not frames:
            raise ValueError("empty window")
        return cls(frames=frames, start_ms=frames[0].t_ms, end_ms=frames[-1].t_ms)

    def __len__(self) -> int:
        return len(self.frames)

    def mmg_matrix(self) -> np.ndarray:
        """(len, 4) array in canonical MMG channel order."""
        return np.stack([mmg_vector(f) for f in self.frames])

    def inertial_matrix(self) -> np.ndarray:
        """(len, 7) array in canonical inertial channel order."""
        return np.stack([inertial_vector(f) for f in self.frames])

    def channel_matrix(self) -> np.ndarray:
        """(len, 11) array: MMG columns then inertial columns."""
        return np.hstack([self.mmg_matrix(), self.inertial_matrix()])


def sliding_windows(frames, window_len: int = 100, step: int = 25) -> list[Window]:
    """Fixed windows starting at sample indices 0, step, 2*step, ...

    Count is floor((N - window_len)/step) + 1; a trailing partial window is
    discarded.  Raises StreamTooShortError when N < window_len.
    """
    frames = list(frames)
    n = len(frames)
    if n < window_len:
        raise StreamTooShortError(f"{n} frames < window of {window_len}")
    out = []
    for start in range(0, n - window_len + 1, step):
        out.append(Window.from_frames(frames[start:start + window_len]))
    return out


def motion_energy(frames, span: int = DEFAULT_SPAN) -> float:
    """Sum of |ax| + |ay| + |az| over exactly `span` consecutive frames."""
    frames = list(frames)
    if len(frames) != span:
        raise WrongSpanError(f"expected {span} frames, got {len(frames)}")
    return float(sum(abs(f.ax) + abs(f.ay) + abs(f.az) for f in frames))


class MotionGate:
    """Idle/Collecting state machine keyed on short-span motion energy.

    A single threshold governs both transitions, evaluated each frame over
    the most recent `span` frames.  The emitted window includes the frames
    that triggered entry; windows shorter than `min_frames` are dropped.
    """

    def __init__(self, threshold: float, span: int = DEFAULT_SPAN,
                 min_frames: int = MIN_GESTURE_FRAMES):
        if threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if span < 1:
            raise ValueError("span must be >= 1")
        self.threshold = threshold
        self.span = span
        self.min_frames = min_frames
        self._recent: deque[SensorFrame] = deque(maxlen=span)
        self._buffer: list[SensorFrame] = []

    @property
    def collecting(self) -> bool:
        return bool(self._buffer)

    def _recent_energy(self) -> float:
        return sum(abs(f.ax) + abs(f.ay) + abs(f.az) for f in self._recent)

    def step(self, frame: SensorFrame) -> Window | None:
        """Feed one frame; returns a variable window on Collecting -> Idle."""
        self._recent.append(frame)
        if not self._buffer:
            if len(self._recent) == self.span and self._recent_energy() > self.threshold:
                self._buffer = list(self._recent)
            return None
        self._buffer.append(frame)
        if self._recent_energy() <= self.threshold:
            collected = self._buffer
            self._buffer = []
            if len(collected) >= self.min_frames:
                return Window.from_frames(collected)
        return None

    def reset(self) -> None:
        self._recent.clear()
        self._buffer = []


def calibrate_threshold(still_frames, span: int = DEFAULT_SPAN) -> float:
    """Motion threshold from rest data: mean + 4*stddev of span energies.

    Energies are taken over every span-length stride of the still stream
    (sliding by one frame, matching how the gate evaluates).  Needs at
    least 10*span frames.
    """
    frames = list(still_frames)
    if len(frames) < 10 * span:
        raise StreamTooShortError(
            f"calibration needs >= {10 * span} frames, got {len(frames)}"
        )
    per_frame = np.array([abs(f.ax) + abs(f.ay) + abs(f.az) for f in frames])
    kernel = np.ones(span)
    energies = np.convolve(per_frame, kernel, mode="valid")
    return float(energies.mean() + 4.0 * energies.std())
