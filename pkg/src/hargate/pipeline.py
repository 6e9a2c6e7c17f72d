"""Hierarchical two-stage streaming orchestrator with power accounting.

Eating: a fixed sliding window feeds the MMG model every step; non-null
windows additionally run the inertial model, and a five-deep majority vote
over window decisions emits events.  Facial: a motion gate collects a
variable window, which is linearly resampled to the fixed input length
before the MMG model and, for non-null activity, the inertial model.

Time spent in each duty state (idle / MMG only / both models) is tracked
per frame so replays can report duty-cycle-weighted power and energy.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import (
    EATING,
    FACIAL,
    ActivityLabel,
    PipelineConfig,
    PowerTable,
    SensorFrame,
    event_class_count,
    label_for,
)
from .nn import ModelSpec, ModelWeights, forward
from .resample import linear_resample
from .segment import MotionGate, calibrate_threshold


class ModelNotLoadedError(ValueError):
    """A pipeline stage is missing its model."""


class NegativeDurationError(ValueError):
    """Power accounting was handed a negative state duration."""


@dataclass(frozen=True)
class EventPrediction:
    """One classified episode with its vote breakdown."""

    label: ActivityLabel
    t_start_ms: int
    t_end_ms: int
    vote_tally: tuple[int, ...]
    stage2_invoked: bool


@dataclass(frozen=True)
class PowerReport:
    """Duty-cycle-weighted power summary of one replayed stream."""

    scenario: str
    duration_s: float
    idle_s: float
    mmg_only_s: float
    both_s: float
    mean_power_w: float
    energy_j: float


def majority_vote(votes, n_classes: int) -> int:
    """Mode of the vote buffer; ties prefer null, else the most recent.

    The null bias keeps tied buffers from raising activity events; among
    non-null tied labels the most recently voted one wins.
    """
    votes = list(votes)
    counts = np.bincount(np.asarray(votes, dtype=np.int64), minlength=n_classes)
    top = counts.max()
    tied = set(np.flatnonzero(counts == top).tolist())
    if 0 in tied:
        return 0
    for vote in reversed(votes):
        if vote in tied:
            return int(vote)
    raise AssertionError("unreachable: some vote must be in the tied set")


def power_report(idle_s: float, mmg_only_s: float, both_s: float,
                 table: PowerTable, scenario: str) -> PowerReport:
    """Mean power and energy from time-in-state durations.

    The eating scenario has no idle state (the MMG model always runs), so
    idle_s must be zero there.
    """
    for name, value in (("idle", idle_s), ("mmg_only", mmg_only_s), ("both", both_s)):
        if value < 0:
            raise NegativeDurationError(f"{name} duration is negative")
    if scenario == EATING:
        if idle_s > 0:
            raise ValueError("eating scenario has no idle state")
        levels = (0.0, table.eating_mmg_w, table.eating_both_w)
    elif scenario == FACIAL:
        levels = (table.facial_idle_w, table.facial_mmg_w, table.facial_both_w)
    else:
        raise ValueError(f"unknown scenario {scenario!r}")
    duration = idle_s + mmg_only_s + both_s
    energy = idle_s * levels[0] + mmg_only_s * levels[1] + both_s * levels[2]
    mean_power = energy / duration if duration > 0 else 0.0
    return PowerReport(
        scenario=scenario,
        duration_s=duration,
        idle_s=idle_s,
        mmg_only_s=mmg_only_s,
        both_s=both_s,
        mean_power_w=mean_power,
        energy_j=energy,
    )


class _StageModels:
    def __init__(self, mmg_spec, mmg_weights, inertial_spec, inertial_weights):
        if mmg_spec is None or mmg_weights is None:
            raise ModelNotLoadedError("stage-1 MMG model not loaded")
        if inertial_spec is None or inertial_weights is None:
            raise ModelNotLoadedError("stage-2 inertial model not loaded")
        mmg_weights.validate(mmg_spec)
        inertial_weights.validate(inertial_spec)
        self.mmg_spec = mmg_spec
        self.mmg_weights = mmg_weights
        self.inertial_spec = inertial_spec
        self.inertial_weights = inertial_weights


class EatingPipeline:
    """Sliding-window two-stage classifier with majority voting.

    Each complete window runs the MMG model; non-null windows also run the
    inertial model.  Once the vote buffer holds vote_depth entries the
    majority is emitted as an event and the buffer slides by one window, so
    emissions continue every window step.  Event intervals are contiguous
    and non-overlapping: each event covers the stream span since the
    previous emission.
    """

    def __init__(self, config: PipelineConfig,
                 mmg_spec: ModelSpec, mmg_weights: ModelWeights,
                 inertial_spec: ModelSpec, inertial_weights: ModelWeights):
        if config.scenario != EATING:
            raise ValueError("EatingPipeline needs an eating-scenario config")
        self.config = config
        self.models = _StageModels(mmg_spec, mmg_weights, inertial_spec, inertial_weights)
        self.n_event_classes = event_class_count(EATING)
        size = (config.window_len, 11)
        self._buf = np.empty(size)
        self._times = np.empty(config.window_len, dtype=np.int64)
        self._filled = 0
        self._votes: deque[int] = deque(maxlen=config.vote_depth)
        self._intervals: deque[tuple[int, int]] = deque(maxlen=config.vote_depth)
        self._next_event_start: int | None = None
        self._unattributed_frames = 0
        self.frames_seen = 0
        self.stage1_invocations = 0
        self.stage2_invocations = 0
        self.mmg_only_frames = 0
        self.both_frames = 0
        self.trace: list[tuple[int, bool]] = []

    def step(self, frame: SensorFrame) -> EventPrediction | None:
        cfg = self.config
        i = self._filled
        self._buf[i] = (
            frame.fsr_l, frame.fsr_r, frame.pef_l, frame.pef_r,
            frame.ax, frame.ay, frame.az,
            frame.qw, frame.qx, frame.qy, frame.qz,
        )
        self._times[i] = frame.t_ms
        self._filled += 1
        self.frames_seen += 1
        self._unattributed_frames += 1
        if self._filled < cfg.window_len:
            return None

        probs1 = forward(self.models.mmg_spec, self.models.mmg_weights,
                         self._buf[:, :4])
        self.stage1_invocations += 1
        stage1_class = int(probs1.argmax())
        if stage1_class == 0:
            vote = 0
            stage2 = False
        else:
            probs2 = forward(self.models.inertial_spec, self.models.inertial_weights,
                             self._buf[:, 4:])
            self.stage2_invocations += 1
            vote = int(probs2.argmax()) + 1
            stage2 = True
        self.trace.append((stage1_class, stage2))
        if stage2:
            self.both_frames += self._unattributed_frames
        else:
            self.mmg_only_frames += self._unattributed_frames
        self._unattributed_frames = 0

        self._votes.append(vote)
        self._intervals.append((int(self._times[0]), int(self._times[-1])))

        step = cfg.window_step
        keep = cfg.window_len - step
        self._buf[:keep] = self._buf[step:]
        self._times[:keep] = self._times[step:]
        self._filled = keep

        if len(self._votes) < cfg.vote_depth:
            return None
        label_id = majority_vote(self._votes, self.n_event_classes)
        tally = tuple(
            int(c) for c in np.bincount(np.array(self._votes),
                                        minlength=self.n_event_classes)
        )
        if self._next_event_start is None:
            t_start = self._intervals[0][0]
        else:
            t_start = self._next_event_start
        t_end = self._intervals[-1][1]
        event = EventPrediction(
            label=label_for(EATING, label_id),
            t_start_ms=t_start,
            t_end_ms=t_end,
            vote_tally=tally,
            stage2_invoked=any(v != 0 for v in self._votes),
        )
        self._next_event_start = t_end
        self._votes.popleft()
        self._intervals.popleft()
        return event

    def finalize(self) -> None:
        """Attribute trailing frames (no window completed) to MMG-only time."""
        self.mmg_only_frames += self._unattributed_frames
        self._unattributed_frames = 0

    def state_durations(self) -> tuple[float, float, float]:
        rate = self.config.sample_rate_hz
        pending = self._unattributed_frames
        return (0.0, (self.mmg_only_frames + pending) / rate, self.both_frames / rate)


class FacialPipeline:
    """Motion-gated two-stage classifier; one event per variable window.

    Idle frames cost only the motion-detection power level.  Each gated
    window is resampled to the fixed input length, classified by the MMG
    model and, when non-null, by the inertial model; the window's duration
    is then attributed to the matching duty state.
    """

    def __init__(self, config: PipelineConfig,
                 mmg_spec: ModelSpec, mmg_weights: ModelWeights,
                 inertial_spec: ModelSpec, inertial_weights: ModelWeights):
        if config.scenario != FACIAL:
            raise ValueError("FacialPipeline needs a facial-scenario config")
        if config.motion_threshold is None:
            raise ValueError("facial pipeline needs a concrete motion_threshold")
        self.config = config
        self.models = _StageModels(mmg_spec, mmg_weights, inertial_spec, inertial_weights)
        self.n_event_classes = event_class_count(FACIAL)
        self.gate = MotionGate(config.motion_threshold, span=config.motion_span)
        self.frames_seen = 0
        self.stage1_invocations = 0
        self.stage2_invocations = 0
        self.idle_frames = 0
        self.mmg_only_frames = 0
        self.both_frames = 0
        self.trace: list[tuple[int, bool]] = []

    def step(self, frame: SensorFrame) -> EventPrediction | None:
        cfg = self.config
        self.frames_seen += 1
        self.idle_frames += 1
        window = self.gate.step(frame)
        if window is None:
            return None
        matrix = window.channel_matrix()
        resampled = linear_resample(matrix, cfg.window_len)
        probs1 = forward(self.models.mmg_spec, self.models.mmg_weights,
                         resampled[:, :4])
        self.stage1_invocations += 1
        stage1_class = int(probs1.argmax())
        if stage1_class == 0:
            label_id = 0
            stage2 = False
        else:
            probs2 = forward(self.models.inertial_spec, self.models.inertial_weights,
                             resampled[:, 4:])
            self.stage2_invocations += 1
            label_id = int(probs2.argmax()) + 1
            stage2 = True
        self.trace.append((stage1_class, stage2))
        # reassign the collected frames from idle to the active duty state
        self.idle_frames -= len(window)
        if stage2:
            self.both_frames += len(window)
        else:
            self.mmg_only_frames += len(window)
        tally = tuple(
            1 if k == label_id else 0 for k in range(self.n_event_classes)
        )
        return EventPrediction(
            label=label_for(FACIAL, label_id),
            t_start_ms=window.start_ms,
            t_end_ms=window.end_ms,
            vote_tally=tally,
            stage2_invoked=stage2,
        )

    def finalize(self) -> None:
        """Frames still buffered in the gate never ran a model: idle."""

    def state_durations(self) -> tuple[float, float, float]:
        rate = self.config.sample_rate_hz
        return (
            self.idle_frames / rate,
            self.mmg_only_frames / rate,
            self.both_frames / rate,
        )


@dataclass
class ReplayResult:
    events: list[EventPrediction]
    power: PowerReport
    latencies_ms: list[float]
    virtual_duration_s: float
    wall_s: float

    def latency_stats(self) -> dict[str, float]:
        if not self.latencies_ms:
            return {"events": 0, "mean_latency_ms": 0.0, "max_latency_ms": 0.0}
        return {
            "events": len(self.latencies_ms),
            "mean_latency_ms": float(np.mean(self.latencies_ms)),
            "max_latency_ms": float(np.max(self.latencies_ms)),
        }


def build_pipeline(config: PipelineConfig,
                   mmg_spec: ModelSpec, mmg_weights: ModelWeights,
                   inertial_spec: ModelSpec, inertial_weights: ModelWeights,
                   frames=None):
    """Construct the scenario's pipeline; auto-calibrates a missing facial
    threshold from the leading rest frames of the stream."""
    if config.scenario == EATING:
        return EatingPipeline(config, mmg_spec, mmg_weights,
                              inertial_spec, inertial_weights)
    if config.motion_threshold is None:
        if frames is None:
            raise ValueError("cannot calibrate a threshold without frames")
        lead = frames[: max(10 * config.motion_span, 120)]
        threshold = calibrate_threshold(lead, span=config.motion_span)
        config = PipelineConfig(
            scenario=config.scenario,
            sample_rate_hz=config.sample_rate_hz,
            window_len=config.window_len,
            window_step=config.window_step,
            motion_threshold=threshold,
            motion_span=config.motion_span,
            vote_depth=config.vote_depth,
            power_table=config.power_table,
            rng_seed=config.rng_seed,
        )
    return FacialPipeline(config, mmg_spec, mmg_weights,
                          inertial_spec, inertial_weights)


def replay(frames, config: PipelineConfig,
           mmg_spec: ModelSpec, mmg_weights: ModelWeights,
           inertial_spec: ModelSpec, inertial_weights: ModelWeights,
           clock: str = "accelerated") -> ReplayResult:
    """Run a recorded stream through the scenario pipeline.

    ``clock="accelerated"`` processes as fast as possible; ``"realtime"``
    paces frames to their timestamps.  The event log is deterministic for
    fixed inputs and weights.
    """
    if clock not in ("accelerated", "realtime"):
        raise ValueError(f"unknown clock {clock!r}")
    frames = list(frames)
    pipe = build_pipeline(config, mmg_spec, mmg_weights,
                          inertial_spec, inertial_weights, frames)
    events: list[EventPrediction] = []
    latencies: list[float] = []
    wall_start = time.perf_counter()
    first_t = frames[0].t_ms if frames else 0
    for frame in frames:
        if clock == "realtime":
            target = wall_start + (frame.t_ms - first_t) / 1000.0
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
        t_in = time.perf_counter()
        event = pipe.step(frame)
        if event is not None:
            latencies.append((time.perf_counter() - t_in) * 1000.0)
            events.append(event)
    pipe.finalize()
    wall_s = time.perf_counter() - wall_start
    idle_s, mmg_s, both_s = pipe.state_durations()
    report = power_report(idle_s, mmg_s, both_s, config.power_table, config.scenario)
    virtual = len(frames) / config.sample_rate_hz
    return ReplayResult(events=events, power=report, latencies_ms=latencies,
                        virtual_duration_s=virtual, wall_s=wall_s)


def event_log_lines(events: list[EventPrediction], scenario: str) -> list[str]:
    """Line-oriented event log: start, end, label, stage-2 flag, tally."""
    k = event_class_count(scenario)
    header = "t_start_ms,t_end_ms,label,stage2_invoked," + ",".join(
        f"tally{i}" for i in range(k)
    )
    lines = [header]
    for ev in events:
        tally = ",".join(str(t) for t in ev.vote_tally)
        lines.append(
            f"{ev.t_start_ms},{ev.t_end_ms},{ev.label.class_id},"
            f"{int(ev.stage2_invoked)},{tally}"
        )
    return lines


def power_report_lines(result: ReplayResult) -> list[str]:
    """PowerReport plus latency stats as key=value text."""
    p = result.power
    stats = result.latency_stats()
    return [
        f"scenario={p.scenario}",
        f"duration_s={p.duration_s:.6f}",
        f"idle_s={p.idle_s:.6f}",
        f"mmg_only_s={p.mmg_only_s:.6f}",
        f"both_s={p.both_s:.6f}",
        f"mean_power_w={p.mean_power_w:.6f}",
        f"energy_j={p.energy_j:.6f}",
        f"events={stats['events']}",
        f"mean_latency_ms={stats['mean_latency_ms']:.3f}",
        f"max_latency_ms={stats['max_latency_ms']:.3f}",
    ]
