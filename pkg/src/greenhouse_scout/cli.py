"""Command line entry point; each subcommand is one pipeline stage."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import mission as ms
from .config import ConfigError, ScenarioConfig, load_config, save_config
from .io import ParseError
from .pipeline import (PipelineError, build_layout, build_world, count, plan_mission, plan_rows, run_pipeline,
                       sense, track, write_path_csv)
from .scanplan import Trajectory
from .vehicle import StateLog
from .worldsim.sensor import read_detections, write_detections_csv, write_detections_json
from .yieldcount import CountReport, write_reachability_csv

log = logging.getLogger("greenhouse_scout")


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _stem(path: str, suffix: str) -> str:
    base = os.path.splitext(os.path.basename(path))[0]
    return base[: -len(suffix)] if base.endswith(suffix) else base


def cmd_gen_config(args) -> int:
    cfg = _config(args)
    target = args.out if args.out.endswith(".json") else os.path.join(_out(args), "config.json")
    save_config(cfg, target)
    print(target)
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args)
    out = _out(args)
    layout = build_layout(cfg)
    rows = range(len(layout.rows)) if args.row is None else [args.row]
    for i in rows:
        if not 0 <= i < len(layout.rows):
            raise PipelineError("plan", IndexError(f"row {i} out of range"))
    try:
        plans = plan_rows(cfg, type(layout)(tuple(layout.rows[i] for i in rows), layout.workstation))
    except Exception as e:
        raise PipelineError("plan", e) from e
    for i, (path, traj) in zip(rows, plans):
        write_path_csv(path, os.path.join(out, f"row{i}_path.csv"))
        traj.to_csv(os.path.join(out, f"row{i}_trajectory.csv"))
        print(f"row {i}: {len(path.waypoints)} waypoints, t_end = {traj.t_end:.2f} s")
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args)
    for f in args.trajectory:
        traj = Trajectory.from_csv(f)
        try:
            lg = track(cfg, traj)
        except Exception as e:
            raise PipelineError("simulate", e) from e
        dst = os.path.join(out, f"{_stem(f, '_trajectory')}_tracking.csv")
        lg.to_csv(dst)
        print(f"{dst}: {len(lg)} states, rms {lg.rms_error(traj) * 100:.2f} cm")
    return 0


def cmd_sense(args) -> int:
    cfg = _config(args)
    out = _out(args)
    sources = [Trajectory.from_csv(f) for f in args.trajectory or []]
    sources += [StateLog.from_csv(f) for f in args.log or []]
    if not sources:
        raise ParseError("sense needs --trajectory or --log input files")
    try:
        world = build_world(cfg)
        dets, frames = sense(cfg, world, sources)
    except Exception as e:
        raise PipelineError("sense", e) from e
    if args.format in ("csv", None):
        write_detections_csv(dets, os.path.join(out, "detections.csv"))
    if args.format in ("json", None):
        write_detections_json(dets, os.path.join(out, "detections.json"))
    print(f"{frames} frames, {len(dets)} detections")
    return 0


def cmd_count(args) -> int:
    cfg = _config(args)
    out = _out(args)
    dets = read_detections(args.detections)
    layout = build_layout(cfg)
    truth = build_world(cfg, layout).ripe_per_row() if args.truth else None
    try:
        report = count(cfg, dets, layout, truth)
    except Exception as e:
        raise PipelineError("count", e) from e
    report.write_json(os.path.join(out, "counts.json"))
    for rc in report.rows:
        write_reachability_csv(rc, os.path.join(out, f"row{rc.row_id}_reachability.csv"))
    print(f"estimated total {report.total}")
    return 0


def cmd_mission(args) -> int:
    cfg = _config(args)
    out = _out(args)
    report = CountReport.read_json(args.counts)
    layout = build_layout(cfg)
    try:
        prob, res = plan_mission(cfg, report, layout)
    except Exception as e:
        raise PipelineError("mission", e) from e
    ms.write_json(prob.to_dict(), os.path.join(out, "mission_problem.json"))
    if args.format in ("json", None):
        ms.write_json(res.schedule.to_dict(), os.path.join(out, "schedule.json"))
    if args.format in ("csv", None):
        res.schedule.write_gantt_csv(os.path.join(out, "schedule.csv"))
    print(f"{prob.n_actions} actions, makespan {res.schedule.makespan:.1f} s, feasible {res.schedule.feasible}")
    return 0 if res.schedule.feasible else 1


def cmd_e2e(args) -> int:
    cfg = _config(args)
    rep = run_pipeline(cfg, _out(args))
    c = rep.data["counts"]
    print(f"truth {rep.data['truth']['total']}, estimate {c['total']}, relative error {c['relative_error']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario JSON (defaults when omitted)")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--out", metavar="DIR", default=".", help="output directory")
    common.add_argument("--format", choices=("csv", "json"), help="restrict outputs to one format")

    p = argparse.ArgumentParser(prog="greenhouse-scout", description="Greenhouse scan, fruit count and "
                                "harvest scheduling toolkit.")
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("gen-config", parents=[common], help="write the default scenario config")
    s.set_defaults(fn=cmd_gen_config)
    s = sub.add_parser("plan", parents=[common], help="plan row scan paths and trajectories")
    s.add_argument("--row", type=int)
    s.set_defaults(fn=cmd_plan)
    s = sub.add_parser("simulate", parents=[common], help="fly trajectories in closed loop")
    s.add_argument("--trajectory", nargs="+", required=True)
    s.set_defaults(fn=cmd_simulate)
    s = sub.add_parser("sense", parents=[common], help="synthetic detections along trajectories or logs")
    s.add_argument("--trajectory", nargs="+")
    s.add_argument("--log", nargs="+")
    s.set_defaults(fn=cmd_sense)
    s = sub.add_parser("count", parents=[common], help="count fruit from a detection log")
    s.add_argument("--detections", required=True)
    s.add_argument("--truth", action="store_true", help="add ground truth regenerated from the config")
    s.set_defaults(fn=cmd_count)
    s = sub.add_parser("mission", parents=[common], help="harvest schedule from a count report")
    s.add_argument("--counts", required=True)
    s.set_defaults(fn=cmd_mission)
    s = sub.add_parser("e2e", parents=[common], help="run the whole pipeline")
    s.set_defaults(fn=cmd_e2e)
    return p


def main(argv=None) -> int:
    level = os.environ.get("GREENHOUSE_SCOUT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
