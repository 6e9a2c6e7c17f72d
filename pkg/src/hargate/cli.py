"""Command-line entry point for reproducible runs.

Commands: gen-data, train, eval, replay, power-report, weights-inspect.
All outputs are plain files (CSV / key=value text); exit codes are 0 ok,
2 config error, 3 I/O error, 4 numeric or training failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import ingest, nn, pipeline as pl, train as tr
from .core import PipelineConfig, PowerTable, SCENARIOS

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class ConfigError(ValueError):
    pass


def _load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    return cfg


def _scenario_from(cfg: dict, override: str | None) -> str:
    scenario = override or cfg.get("scenario")
    if scenario not in SCENARIOS:
        raise ConfigError(
            f"field 'scenario' must be one of {SCENARIOS}, got {scenario!r}"
        )
    return scenario


def _profiles_from(cfg: dict, scenario: str) -> dict[int, ingest.SyntheticProfile]:
    if "profiles" not in cfg:
        return ingest.default_profiles(scenario)
    profiles = {}
    try:
        for entry in cfg["profiles"]:
            profile = ingest.SyntheticProfile(
                class_id=int(entry["class_id"]),
                amplitude={str(k): float(v) for k, v in entry.get("amplitude", {}).items()},
                oscillation_hz=float(entry.get("oscillation_hz", 1.0)),
                burst_len_s=float(entry.get("burst_len_s", 1.0)),
                noise_sigma=float(entry.get("noise_sigma", 0.0)),
            )
            profiles[profile.class_id] = profile
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"field 'profiles' is malformed: {exc}") from exc
    return profiles


def _power_table_from(cfg: dict) -> PowerTable:
    table = cfg.get("power_table", {})
    if not isinstance(table, dict):
        raise ConfigError("field 'power_table' must be an object")
    try:
        return PowerTable(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"field 'power_table' is malformed: {exc}") from exc


def _pipeline_config(cfg: dict, scenario: str, args) -> PipelineConfig:
    threshold = cfg.get("motion_threshold")
    if getattr(args, "motion_threshold", None) is not None:
        threshold = args.motion_threshold
    try:
        return PipelineConfig(
            scenario=scenario,
            sample_rate_hz=float(cfg.get("sample_rate_hz", 50.0)),
            window_len=int(cfg.get("window_len", 100)),
            window_step=int(cfg.get("window_step", 25)),
            motion_threshold=threshold,
            motion_span=int(cfg.get("motion_span", 6)),
            vote_depth=int(cfg.get("vote_depth", 5)),
            power_table=_power_table_from(cfg),
            rng_seed=int(cfg.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"pipeline config invalid: {exc}") from exc


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    scenario = _scenario_from(cfg, args.scenario)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
    rate = float(cfg.get("sample_rate_hz", 50.0))
    profiles = _profiles_from(cfg, scenario)
    sessions_cfg = cfg.get("sessions")
    if not isinstance(sessions_cfg, list) or not sessions_cfg:
        raise ConfigError("field 'sessions' must be a nonempty list")
    sessions = []
    for i, entry in enumerate(sessions_cfg):
        try:
            session_id = str(entry["session_id"])
            schedule = [(int(c), float(d)) for c, d in entry["schedule"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"sessions[{i}] is malformed: {exc}") from exc
        sessions.append(
            ingest.generate_session(
                profiles, schedule, seed + i, session_id=session_id,
                sample_rate_hz=rate,
            )
        )
    dataset = ingest.SessionDataset(scenario=scenario, sessions=sessions)
    out_dir = Path(args.out)
    paths = ingest.write_log(dataset, out_dir)
    manifest = {
        "scenario": scenario,
        "seed": seed,
        "sample_rate_hz": rate,
        "sessions": [
            {"session_id": s["session_id"], "schedule": s["schedule"]}
            for s in sessions_cfg
        ],
        "profiles": [
            {
                "class_id": p.class_id,
                "amplitude": p.amplitude,
                "oscillation_hz": p.oscillation_hz,
                "burst_len_s": p.burst_len_s,
                "noise_sigma": p.noise_sigma,
            }
            for p in profiles.values()
        ],
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    print(f"wrote {len(paths)} session files + manifest to {out_dir}")
    return EXIT_OK


def _train_config(args, seed: int) -> tr.TrainConfig:
    cfg = tr.TrainConfig(rng_seed=seed)
    if args.epochs is not None:
        patience = min(cfg.early_stop_patience, max(args.epochs - 1, 0))
        cfg = replace(cfg, epochs=args.epochs, early_stop_patience=patience)
    if getattr(args, "batch_size", None) is not None:
        cfg = replace(cfg, batch_size=args.batch_size)
    return cfg


def cmd_train(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    dataset = ingest.read_log(data_dir, args.scenario)
    if len(dataset.sessions) < 2:
        raise tr.EmptySplitError("training needs >= 2 sessions (last is validation)")
    fit_sessions, val_sessions = dataset.sessions[:-1], dataset.sessions[-1:]
    spec = tr.stage_spec(args.stage, args.scenario)
    x, y = tr.windowed_stage_data(fit_sessions, args.stage, args.scenario)
    vx, vy = tr.windowed_stage_data(val_sessions, args.stage, args.scenario)
    cfg = _train_config(args, args.seed)
    weights, history = tr.fit(spec, x, y, cfg, vx, vy)
    nn.save_weights(spec, weights, args.out)
    if args.history:
        Path(args.history).write_text("\n".join(tr.history_lines(history)) + "\n")
    print(f"trained {args.stage} model for {len(history)} epochs -> {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory {data_dir} does not exist")
    dataset = ingest.read_log(data_dir, args.scenario)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.weights:
        spec, weights = nn.load_weights(args.weights)
        reports = []
        for session in dataset.sessions:
            tx, ty = tr.windowed_stage_data([session], args.stage, args.scenario)
            if len(tx) == 0:
                raise tr.EmptySplitError(f"session {session.session_id} has no windows")
            reports.append(tr.evaluate(spec, weights, tx, ty, fold_id=session.session_id))
    else:
        cfg = _train_config(args, args.seed)
        reports = tr.crossval(dataset, args.stage, cfg)

    fold_lines = ["fold_id,macro_f1"]
    for report in reports:
        fold_lines.append(f"{report.fold_id},{report.macro_f1!r}")
        rows = ["true_class," + ",".join(
            f"pred_{k}" for k in range(report.confusion.shape[1]))]
        for k, row in enumerate(report.confusion):
            rows.append(f"{k}," + ",".join(str(v) for v in row))
        (out_dir / f"confusion_{report.fold_id}.csv").write_text("\n".join(rows) + "\n")
        (out_dir / f"report_{report.fold_id}.txt").write_text(report.to_line() + "\n")
    (out_dir / "folds.csv").write_text("\n".join(fold_lines) + "\n")
    aggregate = sum(r.macro_f1 for r in reports) / len(reports)
    (out_dir / "aggregate.txt").write_text(
        f"folds={len(reports)}\nmacro_f1_mean={aggregate!r}\n"
    )
    print(f"evaluated {len(reports)} folds; mean macro-F1 {aggregate:.4f}")
    return EXIT_OK


def _load_stream(path, scenario: str) -> list[ingest.Session]:
    path = Path(path)
    if path.is_dir():
        return ingest.read_log(path, scenario).sessions
    if path.is_file():
        return [ingest.read_session_csv(path, scenario)]
    raise FileNotFoundError(f"{path} is neither a session CSV nor a directory")


def cmd_replay(args) -> int:
    cfg_dict = _load_config(args.config) if args.config else {}
    scenario = _scenario_from(cfg_dict, args.scenario)
    config = _pipeline_config(cfg_dict, scenario, args)
    mmg_spec, mmg_weights = nn.load_weights(args.mmg_weights)
    in_spec, in_weights = nn.load_weights(args.inertial_weights)
    sessions = _load_stream(args.data, scenario)

    event_lines: list[str] = []
    power_lines: list[str] = []
    for session in sessions:
        result = pl.replay(session.frames, config, mmg_spec, mmg_weights,
                           in_spec, in_weights, clock=args.clock)
        event_lines.append(f"# session {session.session_id}")
        event_lines.extend(pl.event_log_lines(result.events, scenario))
        power_lines.append(f"# session {session.session_id}")
        power_lines.extend(pl.power_report_lines(result))
        print(
            f"{session.session_id}: {len(result.events)} events, "
            f"mean power {result.power.mean_power_w:.4f} W, wall {result.wall_s:.2f} s"
        )
    if args.events_out:
        Path(args.events_out).write_text("\n".join(event_lines) + "\n")
    if args.power_out:
        Path(args.power_out).write_text("\n".join(power_lines) + "\n")
    return EXIT_OK


def cmd_power_report(args) -> int:
    cfg_dict = _load_config(args.config) if args.config else {}
    table = _power_table_from(cfg_dict)
    if args.scenario not in SCENARIOS:
        raise ConfigError(f"scenario must be one of {SCENARIOS}")
    report = pl.power_report(args.idle_s, args.mmg_s, args.both_s, table, args.scenario)
    result = pl.ReplayResult(events=[], power=report, latencies_ms=[],
                             virtual_duration_s=report.duration_s, wall_s=0.0)
    for line in pl.power_report_lines(result)[:7]:
        print(line)
    return EXIT_OK


def cmd_weights_inspect(args) -> int:
    info = nn.inspect_weights(args.weights)
    print(json.dumps(info, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hargate",
        description="Two-stage streaming activity recognition toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic session CSVs")
    p.add_argument("--config", required=True, help="JSON config with sessions/schedules")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one stage model on a session dataset")
    p.add_argument("--data", required=True, help="directory of session CSVs")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--stage", required=True, choices=(tr.STAGE_MMG, tr.STAGE_INERTIAL))
    p.add_argument("--out", required=True, help="output weight file")
    p.add_argument("--history", help="optional per-epoch history CSV")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="leave-one-session-out evaluation")
    p.add_argument("--data", required=True)
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--stage", required=True, choices=(tr.STAGE_MMG, tr.STAGE_INERTIAL))
    p.add_argument("--out", required=True, help="output directory for reports")
    p.add_argument("--weights", help="evaluate fixed weights instead of retraining")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="replay a stream through the pipeline")
    p.add_argument("--data", required=True, help="session CSV or directory")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--mmg-weights", required=True)
    p.add_argument("--inertial-weights", required=True)
    p.add_argument("--clock", choices=("accelerated", "realtime"), default="accelerated")
    p.add_argument("--config", help="pipeline config JSON")
    p.add_argument("--motion-threshold", type=float, dest="motion_threshold")
    p.add_argument("--events-out")
    p.add_argument("--power-out")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("power-report", help="duty-cycle power arithmetic")
    p.add_argument("--scenario", required=True)
    p.add_argument("--idle-s", type=float, default=0.0, dest="idle_s")
    p.add_argument("--mmg-s", type=float, default=0.0, dest="mmg_s")
    p.add_argument("--both-s", type=float, default=0.0, dest="both_s")
    p.add_argument("--config")
    p.set_defaults(func=cmd_power_report)

    p = sub.add_parser("weights-inspect", help="summarize a weight file")
    p.add_argument("--weights", required=True)
    p.set_defaults(func=cmd_weights_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (tr.EmptySplitError, tr.TrainingDivergedError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ingest.EmptyDatasetError, ingest.SchemaError,
            ingest.NonMonotonicTimestampError, nn.WeightFileError,
            FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
