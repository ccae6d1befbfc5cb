"""End-to-end scan-and-count scenario and its per-stage building blocks."""

from __future__ import annotations

import json
import logging
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import mission as ms
from .config import ScenarioConfig, save_config, stage_seed
from .scanplan import Trajectory, plan_row_trajectory
from .spatial import ManipulatorGeometry
from .vehicle import StateLog, simulate_tracking
from .worldsim import layout as wl
from .worldsim.sensor import frame_rng, sample_camera_poses, simulate_detections, write_detections_csv, \
    write_detections_json
from .worldsim.world import World, generate_world
from .yieldcount import CountReport, count_yield, per_plant_counts, write_reachability_csv

log = logging.getLogger("greenhouse_scout")


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    log.info("stage %s: start", name)
    try:
        yield
    except PipelineError:
        raise
    except Exception as e:  # reported with its stage name
        raise PipelineError(name, e) from e
    finally:
        timings[name] = timings.get(name, 0.0) + time.perf_counter() - t0
    log.info("stage %s: done in %.2f s", name, timings[name])


def build_layout(cfg: ScenarioConfig) -> wl.GreenhouseLayout:
    return wl.default_layout(cfg.layout)


def build_world(cfg: ScenarioConfig, layout=None) -> World:
    layout = layout or build_layout(cfg)
    return generate_world(layout, cfg.world.fruiting_count, cfg.world.peppers_per_side,
                          stage_seed(cfg.seed, "world"), cfg.world.params)


def plan_rows(cfg: ScenarioConfig, layout) -> list:
    """(path, trajectory) per row."""
    return [plan_row_trajectory(row, cfg.scan, cfg.limits, cfg.trajectory.grid_n, cfg.trajectory.dt)
            for row in layout.rows]


def trajectory_margins(traj: Trajectory, limits) -> dict:
    v = np.abs(traj.velocities) / np.asarray(limits.v_max)
    a = np.abs(traj.accelerations) / np.asarray(limits.a_max)
    return {"t_end": traj.t_end, "samples": len(traj.t), "max_velocity_ratio": float(v.max()),
            "max_acceleration_ratio": float(a.max())}


def track(cfg: ScenarioConfig, traj: Trajectory) -> StateLog:
    return simulate_tracking(traj, cfg.vehicle, cfg.gains, cfg.tracking.dt, cfg.tracking.rotor_layout)


def sense(cfg: ScenarioConfig, world: World, sources, geometry=None) -> tuple[list, int]:
    """Detections from a sequence of trajectories or flight logs flown back to back.

    Frame indices and timestamps run on across sources; each frame has its own
    random stream derived from the sensing seed and the frame index.
    """
    geometry = geometry or ManipulatorGeometry()
    seed = stage_seed(cfg.seed, "sense")
    dets, frame, t_off = [], 0, 0.0
    for src in sources:
        times, poses = sample_camera_poses(src, cfg.sensor.frame_rate, geometry)
        t0 = float(np.asarray(src.t)[0])
        for t, pose in zip(times, poses):
            dets.extend(simulate_detections(world, pose, cfg.sensor.intrinsics, cfg.sensor.detector,
                                            frame_rng(seed, frame), frame, t_off + t - t0))
            frame += 1
        t_off += float(np.asarray(src.t)[-1]) - t0
    return dets, frame


def count(cfg: ScenarioConfig, dets, layout, truth_per_row=None) -> CountReport:
    return count_yield(dets, layout, cfg.counting, stage_seed(cfg.seed, "count"), truth_per_row)


def plan_mission(cfg: ScenarioConfig, report: CountReport, layout) -> tuple[ms.MissionProblem, ms.SolveResult]:
    prob = ms.actions_from_counts(per_plant_counts(report, layout), layout, cfg.mission.robots)
    solver = cfg.mission.solver
    solver = ms.SolverConfig(**{**solver.__dict__, "seed": stage_seed(cfg.seed, "mission")})
    return prob, ms.solve(prob, solver)


@dataclass
class RunReport:
    data: dict
    timings: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=1, sort_keys=True)

    def write(self, out_dir):
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(self.to_json() + "\n")
        with open(os.path.join(out_dir, "timings.json"), "w") as fh:
            json.dump(self.timings, fh, indent=1, sort_keys=True)

    @property
    def relative_error(self):
        return self.data["counts"]["relative_error"]


def run_pipeline(cfg: ScenarioConfig, out_dir=None) -> RunReport:
    """World -> row plans -> (tracking) -> sensing -> counting -> mission schedule."""
    timings: dict = {}
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        save_config(cfg, os.path.join(out_dir, "config.json"))
    geometry = ManipulatorGeometry()
    with _stage("world", timings):
        layout = build_layout(cfg)
        world = build_world(cfg, layout)
        truth = world.ripe_per_row()
    with _stage("plan", timings):
        plans = plan_rows(cfg, layout)
    margins = [trajectory_margins(tr, cfg.limits) for _, tr in plans]
    sources = [tr for _, tr in plans]
    tracking = {"mode": cfg.tracking.mode, "threshold": cfg.tracking.rms_threshold}
    if cfg.tracking.mode == "tracked":
        with _stage("simulate", timings):
            logs = [track(cfg, tr) for tr in sources]
        rms = [lg.rms_error(tr) for lg, tr in zip(logs, sources)]
        tracking.update(rms_per_row=rms, rms_max=max(rms), within_threshold=max(rms) <= cfg.tracking.rms_threshold,
                        saturated_steps=[lg.saturated_steps for lg in logs])
        sources = logs
    with _stage("sense", timings):
        dets, n_frames = sense(cfg, world, sources, geometry)
    with _stage("count", timings):
        report = count(cfg, dets, layout, truth)
    with _stage("mission", timings):
        prob, result = plan_mission(cfg, report, layout)
        errs = ms.verify_schedule(result.schedule, prob) if result.schedule.feasible else []
        if errs:
            raise PipelineError("mission", RuntimeError("; ".join(errs)))
    if out_dir:
        with _stage("write", timings):
            _write_artifacts(out_dir, cfg, world, plans, sources if cfg.tracking.mode == "tracked" else None,
                             dets, report, prob, result)
    counts = report.to_dict()
    data = {
        "seeds": {"master": cfg.seed, **{s: stage_seed(cfg.seed, s) for s in ("world", "sense", "count", "mission")}},
        "truth": {"per_row": [int(v) for v in truth], "total": int(truth.sum()), "peppers": world.n_peppers},
        "counts": {
            "per_row": [r.count for r in report.rows],
            "total": report.total,
            "per_plant": per_plant_counts(report, layout).tolist(),
            "absolute_error": abs(report.total - int(truth.sum())),
            "relative_error": report.relative_error(),
            "rows": counts["rows"],
        },
        "trajectories": margins,
        "tracking": tracking,
        "sensing": {"frames": n_frames, "detections": len(dets),
                    "false_positives": sum(d.source < 0 for d in dets)},
        "mission": {"actions": prob.n_actions, "feasible": result.schedule.feasible,
                    "makespan": result.schedule.makespan, "cost": result.schedule.cost,
                    "generations": result.generations},
    }
    rep = RunReport(data, timings)
    if out_dir:
        rep.write(out_dir)
    return rep


def _write_artifacts(out_dir, cfg, world, plans, logs, dets, report, prob, result):
    c, r, ripe, owner = world.peppers
    with open(os.path.join(out_dir, "world_truth.json"), "w") as fh:
        json.dump({"peppers": [{"center": c[k].tolist(), "radius": float(r[k]), "ripe": bool(ripe[k]),
                                "plant": int(owner[k])} for k in range(len(r))],
                   "ripe_per_row": world.ripe_per_row().tolist()}, fh, indent=1)
    for i, (path, traj) in enumerate(plans):
        write_path_csv(path, os.path.join(out_dir, f"row{i}_path.csv"))
        traj.to_csv(os.path.join(out_dir, f"row{i}_trajectory.csv"))
    if logs is not None:
        step = max(1, cfg.tracking.log_decimation)
        for i, lg in enumerate(logs):
            StateLog(lg.t[::step], lg.q[::step], lg.q_dot[::step], lg.rotor_speeds[::step],
                     lg.rotations[::step], lg.saturated_steps).to_csv(os.path.join(out_dir, f"row{i}_tracking.csv"))
    write_detections_csv(dets, os.path.join(out_dir, "detections.csv"))
    write_detections_json(dets, os.path.join(out_dir, "detections.json"))
    report.write_json(os.path.join(out_dir, "counts.json"))
    for rc in report.rows:
        write_reachability_csv(rc, os.path.join(out_dir, f"row{rc.row_id}_reachability.csv"))
    ms.write_json(prob.to_dict(), os.path.join(out_dir, "mission_problem.json"))
    ms.write_json(result.schedule.to_dict(), os.path.join(out_dir, "schedule.json"))
    result.schedule.write_gantt_csv(os.path.join(out_dir, "schedule.csv"))


def write_path_csv(path, filename):
    import csv

    with open(filename, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "psi", "q1", "q2", "q3", "stop"])
        stops = set(int(s) for s in path.stops)
        for k, wp in enumerate(path.waypoints):
            w.writerow([repr(float(v)) for v in wp] + [int(k in stops)])
