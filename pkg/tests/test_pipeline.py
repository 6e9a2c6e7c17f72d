import itertools

import numpy as np
import pytest

from hargate import ingest
from hargate.core import EATING, FACIAL, PipelineConfig, PowerTable, SensorFrame
from hargate.pipeline import (
    EatingPipeline,
    FacialPipeline,
    ModelNotLoadedError,
    NegativeDurationError,
    event_log_lines,
    majority_vote,
    power_report,
    power_report_lines,
    replay,
)
from hargate.segment import calibrate_threshold

from reference import reference_majority_vote


class TestMajorityVote:
    def test_simple_majority(self):
        # [eat, eat, drink, eat, drink] -> eating with tally [0, 3, 2]
        votes = [1, 1, 2, 1, 2]
        assert majority_vote(votes, 3) == 1
        assert np.bincount(votes, minlength=3).tolist() == [0, 3, 2]

    def test_all_null(self):
        assert majority_vote([0, 0, 0, 0, 0], 3) == 0

    def test_null_wins_ties(self):
        assert majority_vote([0, 0, 1, 1, 2], 3) == 0

    def test_recent_wins_nonnull_ties(self):
        assert majority_vote([1, 1, 2, 2, 0], 3) == 2
        assert majority_vote([2, 2, 1, 1, 0], 3) == 1

    def test_exhaustive_enumeration_matches_oracle(self):
        mismatches = 0
        for votes in itertools.product(range(3), repeat=5):
            if majority_vote(list(votes), 3) != reference_majority_vote(votes):
                mismatches += 1
        assert mismatches == 0


class TestPowerReport:
    def test_facial_idle_level(self):
        report = power_report(100.0, 0.0, 0.0, PowerTable(), FACIAL)
        assert report.mean_power_w == pytest.approx(0.46, abs=1e-12)

    def test_facial_gating_reduction(self):
        idle = power_report(50.0, 0.0, 0.0, PowerTable(), FACIAL)
        busy = power_report(0.0, 50.0, 0.0, PowerTable(), FACIAL)
        reduction = (busy.mean_power_w - idle.mean_power_w) / busy.mean_power_w
        assert reduction * 100 == pytest.approx(16.36, abs=0.5)

    def test_eating_half_duty(self):
        report = power_report(0.0, 30.0, 30.0, PowerTable(), EATING)
        assert report.mean_power_w == pytest.approx((0.5489 + 0.5988) / 2, abs=1e-12)
        assert report.mean_power_w == pytest.approx(0.57385, abs=1e-12)

    def test_eating_rejects_idle_time(self):
        with pytest.raises(ValueError):
            power_report(1.0, 10.0, 0.0, PowerTable(), EATING)

    def test_negative_duration(self):
        with pytest.raises(NegativeDurationError):
            power_report(-1.0, 0.0, 0.0, PowerTable(), FACIAL)

    def test_zero_duration(self):
        report = power_report(0.0, 0.0, 0.0, PowerTable(), FACIAL)
        assert report.mean_power_w == 0.0 and report.energy_j == 0.0

    def test_monotone_in_both_models_time(self):
        total = 60.0
        last = -1.0
        for both in np.linspace(0.0, total, 13):
            report = power_report(0.0, total - both, both, PowerTable(), EATING)
            assert report.mean_power_w >= last - 1e-12
            last = report.mean_power_w

    def test_energy_equals_mean_times_duration(self):
        report = power_report(10.0, 20.0, 5.0, PowerTable(), FACIAL)
        assert report.energy_j == pytest.approx(
            report.mean_power_w * report.duration_s, abs=1e-9
        )


def eating_stream(n_frames, seed=0):
    profiles = ingest.default_profiles(EATING)
    duration = n_frames / 50.0
    return ingest.generate_session(profiles, [(1, duration)], seed=seed,
                                   session_id="stream").frames


class TestEatingPipeline:
    def test_requires_models(self, random_eating_models):
        mspec, mw, ispec, iw = random_eating_models
        cfg = PipelineConfig(scenario=EATING)
        with pytest.raises(ModelNotLoadedError):
            EatingPipeline(cfg, mspec, None, ispec, iw)
        with pytest.raises(ModelNotLoadedError):
            EatingPipeline(cfg, None, mw, ispec, iw)

    def test_first_event_after_five_windows(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        frames = eating_stream(100 + 4 * 25)
        events = [e for f in frames if (e := pipe.step(f)) is not None]
        assert len(events) == 1
        # five windows buffered: 100 + 4*25 frames, ~4 s of stream
        assert events[0].t_start_ms == 0
        assert abs(events[0].t_end_ms - 4000) <= 500

    def test_event_cadence_one_per_step(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        frames = eating_stream(100 + 9 * 25)
        events = [e for f in frames if (e := pipe.step(f)) is not None]
        assert len(events) == 6  # windows 5..10 each emit once

    def test_events_non_overlapping_and_ordered(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        frames = eating_stream(1000)
        events = [e for f in frames if (e := pipe.step(f)) is not None]
        assert len(events) > 5
        for ev in events:
            assert ev.t_start_ms < ev.t_end_ms
        for a, b in zip(events, events[1:]):
            assert a.t_end_ms <= b.t_start_ms

    def test_tally_sums_to_vote_depth(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        frames = eating_stream(800)
        for frame in frames:
            event = pipe.step(frame)
            if event is not None:
                assert sum(event.vote_tally) == cfg.vote_depth
                assert len(event.vote_tally) == 3

    def test_stage2_never_runs_on_null_windows(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        for frame in eating_stream(2000):
            pipe.step(frame)
        assert pipe.trace  # something ran
        for stage1_class, stage2_ran in pipe.trace:
            if stage1_class == 0:
                assert not stage2_ran

    def test_state_durations_sum_to_stream(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        pipe = EatingPipeline(cfg, *random_eating_models)
        frames = eating_stream(437)
        for frame in frames:
            pipe.step(frame)
        pipe.finalize()
        idle, mmg, both = pipe.state_durations()
        assert idle == 0.0
        assert idle + mmg + both == pytest.approx(437 / 50.0, abs=1e-9)


def facial_gesture_session(seed=0):
    profiles = ingest.default_profiles(FACIAL)
    return ingest.generate_session(
        profiles, [(0, 20.0), (3, 2.0), (0, 20.0)], seed=seed, session_id="wink"
    )


class TestFacialPipeline:
    def threshold(self, facial_still_session):
        return calibrate_threshold(facial_still_session.frames[:300])

    def test_needs_threshold(self, random_facial_models):
        cfg = PipelineConfig(scenario=FACIAL, motion_threshold=None)
        with pytest.raises(ValueError):
            FacialPipeline(cfg, *random_facial_models)

    def test_still_stream_no_events_no_invocations(self, random_facial_models,
                                                   facial_still_session):
        cfg = PipelineConfig(scenario=FACIAL,
                             motion_threshold=self.threshold(facial_still_session))
        pipe = FacialPipeline(cfg, *random_facial_models)
        events = [e for f in facial_still_session.frames
                  if (e := pipe.step(f)) is not None]
        assert events == []
        assert pipe.stage1_invocations == 0
        assert pipe.stage2_invocations == 0

    def test_single_gesture_single_event(self, random_facial_models,
                                         facial_still_session):
        cfg = PipelineConfig(scenario=FACIAL,
                             motion_threshold=self.threshold(facial_still_session))
        session = facial_gesture_session(seed=1)
        pipe = FacialPipeline(cfg, *random_facial_models)
        events = [e for f in session.frames if (e := pipe.step(f)) is not None]
        assert len(events) == 1
        assert pipe.stage1_invocations == 1
        assert events[0].stage2_invoked == (events[0].label.class_id != 0)
        assert sum(events[0].vote_tally) == 1
        assert len(events[0].vote_tally) == 6

    def test_gating_contract_null_skips_stage2(self, random_facial_models,
                                               facial_still_session):
        cfg = PipelineConfig(scenario=FACIAL,
                             motion_threshold=self.threshold(facial_still_session))
        pipe = FacialPipeline(cfg, *random_facial_models)
        for seed in range(4):
            for frame in facial_gesture_session(seed=seed).frames:
                pipe.step(frame)
        for stage1_class, stage2_ran in pipe.trace:
            assert stage2_ran == (stage1_class != 0)

    def test_model_input_is_exactly_resampled_window(self, random_facial_models,
                                                     facial_still_session,
                                                     monkeypatch):
        import hargate.pipeline as pl
        shapes = []
        original = pl.forward

        def spy(spec, weights, window, *args, **kwargs):
            shapes.append(np.asarray(window).shape)
            return original(spec, weights, window, *args, **kwargs)

        monkeypatch.setattr(pl, "forward", spy)
        cfg = PipelineConfig(scenario=FACIAL,
                             motion_threshold=self.threshold(facial_still_session))
        pipe = FacialPipeline(cfg, *random_facial_models)
        for frame in facial_gesture_session(seed=2).frames:
            pipe.step(frame)
        assert shapes
        assert all(shape in ((100, 4), (100, 7)) for shape in shapes)

    def test_state_durations_sum_to_stream(self, random_facial_models,
                                           facial_still_session):
        cfg = PipelineConfig(scenario=FACIAL,
                             motion_threshold=self.threshold(facial_still_session))
        session = facial_gesture_session(seed=3)
        pipe = FacialPipeline(cfg, *random_facial_models)
        for frame in session.frames:
            pipe.step(frame)
        pipe.finalize()
        idle, mmg, both = pipe.state_durations()
        assert idle + mmg + both == pytest.approx(len(session.frames) / 50.0, abs=1e-9)
        assert idle > 0.0


class TestReplay:
    def test_deterministic_event_logs(self, random_eating_models):
        frames = eating_stream(1200, seed=4)
        cfg = PipelineConfig(scenario=EATING)
        res1 = replay(frames, cfg, *random_eating_models)
        res2 = replay(frames, cfg, *random_eating_models)
        log1 = "\n".join(event_log_lines(res1.events, EATING))
        log2 = "\n".join(event_log_lines(res2.events, EATING))
        assert log1 == log2

    def test_empty_stream(self, random_eating_models):
        cfg = PipelineConfig(scenario=EATING)
        res = replay([], cfg, *random_eating_models)
        assert res.events == []
        assert res.power.duration_s == 0.0
        assert res.power.energy_j == 0.0

    def test_accelerated_faster_than_realtime(self, random_eating_models):
        frames = eating_stream(1500, seed=5)
        cfg = PipelineConfig(scenario=EATING)
        res = replay(frames, cfg, *random_eating_models, clock="accelerated")
        assert res.wall_s < res.virtual_duration_s

    def test_realtime_paces_event_spacing(self, random_eating_models):
        # 6 s stream -> events at 4.0, 4.5, 5.0, 5.5 s; wall spacing ~0.5 s
        frames = eating_stream(300, seed=6)
        cfg = PipelineConfig(scenario=EATING)
        import time
        walls = []
        from hargate.pipeline import EatingPipeline
        pipe = EatingPipeline(cfg, *random_eating_models)
        start = time.perf_counter()
        first_t = frames[0].t_ms
        for frame in frames:
            target = start + (frame.t_ms - first_t) / 1000.0
            delay = target - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            if pipe.step(frame) is not None:
                walls.append(time.perf_counter())
        assert len(walls) >= 3
        spacings = np.diff(walls)
        assert np.all(np.abs(spacings - 0.5) <= 0.05)

    def test_unknown_clock(self, random_eating_models):
        with pytest.raises(ValueError):
            replay([], PipelineConfig(scenario=EATING), *random_eating_models,
                   clock="sundial")

    def test_facial_auto_threshold(self, random_facial_models):
        session = facial_gesture_session(seed=7)
        cfg = PipelineConfig(scenario=FACIAL, motion_threshold=None)
        res = replay(session.frames, cfg, *random_facial_models)
        assert len(res.events) == 1

    def test_power_lines_format(self, random_eating_models):
        frames = eating_stream(600, seed=8)
        cfg = PipelineConfig(scenario=EATING)
        res = replay(frames, cfg, *random_eating_models)
        lines = power_report_lines(res)
        keys = [line.split("=")[0] for line in lines]
        assert keys == ["scenario", "duration_s", "idle_s", "mmg_only_s", "both_s",
                        "mean_power_w", "energy_j", "events", "mean_latency_ms",
                        "max_latency_ms"]

    def test_event_log_header(self, random_eating_models):
        frames = eating_stream(300, seed=9)
        cfg = PipelineConfig(scenario=EATING)
        res = replay(frames, cfg, *random_eating_models)
        lines = event_log_lines(res.events, EATING)
        assert lines[0] == "t_start_ms,t_end_ms,label,stage2_invoked,tally0,tally1,tally2"
        assert len(lines) == len(res.events) + 1
