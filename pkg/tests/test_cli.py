import csv
import dataclasses
import json
import math

import numpy as np
import pytest

from greenhouse_scout import cli
from greenhouse_scout.config import ConfigError, ScenarioConfig, load_config, save_config, stage_seed, to_dict
from greenhouse_scout.pipeline import PipelineError, build_layout, run_pipeline
from greenhouse_scout.scanplan import Trajectory
from greenhouse_scout.spatial import Transform
from greenhouse_scout.worldsim.sensor import DETECTION_COLUMNS, frame_times


def mini_config(**world):
    """Two tables of two plants, flown on the planned trajectory: a few seconds end to end."""
    c = ScenarioConfig(seed=7)
    return dataclasses.replace(
        c,
        layout=dataclasses.replace(c.layout, n_tables=2, plants_per_table=2),
        world=dataclasses.replace(c.world, **{"fruiting_count": 3, **world}),
        tracking=dataclasses.replace(c.tracking, mode="planned"),
    )


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def mini(tmp_path_factory):
    root = tmp_path_factory.mktemp("mini")
    save_config(mini_config(), root / "mini.json")
    assert cli.main(["e2e", "--config", str(root / "mini.json"), "--out", str(root / "e2e")]) == 0
    return root


# ----------------------------------------------------------------------------- config


def test_gen_config_round_trip(tmp_path, capsys):
    code, out, _ = run(["gen-config", "--out", tmp_path], capsys)
    assert code == 0
    assert load_config(tmp_path / "config.json") == ScenarioConfig()
    code, _, _ = run(["gen-config", "--seed", 5, "--out", tmp_path / "s5.json"], capsys)
    assert code == 0 and load_config(tmp_path / "s5.json").seed == 5


def test_config_round_trip_non_default(tmp_path):
    cfg = mini_config(peppers_per_side=(2, 3))
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


@pytest.mark.parametrize("mutate, needle", [
    (lambda d: d.update(colour="red"), "unknown key(s) ['colour']"),
    (lambda d: d["limits"].update(jerk=1.0), "config.limits: unknown key(s) ['jerk']"),
    (lambda d: d["mission"]["robots"][0].update(wheels=4), "config.mission.robots[0]"),
    (lambda d: d.update(seed="zero"), "config.seed: expected an integer"),
    (lambda d: d["tracking"].update(mode="teleport"), "tracking.mode"),
    (lambda d: d["sensor"].update(intrinsics=3), "config.sensor.intrinsics: expected an object"),
])
def test_strict_config_rejections(tmp_path, capsys, mutate, needle):
    data = to_dict(ScenarioConfig())
    mutate(data)
    (tmp_path / "bad.json").write_text(json.dumps(data))
    with pytest.raises(ConfigError) as e:
        load_config(tmp_path / "bad.json")
    assert needle in str(e.value)
    code, _, err = run(["e2e", "--config", tmp_path / "bad.json", "--out", tmp_path], capsys)
    assert code == 2 and needle in err


def test_malformed_config_reports_position(tmp_path, capsys):
    (tmp_path / "bad.json").write_text('{\n  "seed": 1,\n  oops\n}')
    code, _, err = run(["plan", "--config", tmp_path / "bad.json", "--out", tmp_path], capsys)
    assert code == 2 and "line 3" in err
    code, _, err = run(["plan", "--config", tmp_path / "missing.json", "--out", tmp_path], capsys)
    assert code == 2 and "missing.json" in err


def test_stage_seeds():
    assert stage_seed(0, "world") == stage_seed(0, "world")
    seeds = {stage_seed(s, st) for s in range(5) for st in ("world", "sense", "count", "mission")}
    assert len(seeds) == 20
    assert all(0 <= s < 2**63 for s in seeds)


# ----------------------------------------------------------------------------- e2e


def test_e2e_writes_artifacts(mini):
    out = mini / "e2e"
    for name in ("config.json", "report.json", "timings.json", "world_truth.json", "detections.csv",
                 "detections.json", "counts.json", "mission_problem.json", "schedule.json", "schedule.csv",
                 "row0_path.csv", "row0_trajectory.csv", "row1_reachability.csv"):
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    truth, est = rep["truth"]["total"], rep["counts"]["total"]
    assert rep["counts"]["absolute_error"] == abs(est - truth)
    assert rep["counts"]["relative_error"] == pytest.approx(abs(est - truth) / truth)
    assert rep["tracking"]["mode"] == "planned"
    assert rep["mission"]["feasible"]
    assert set(rep["seeds"]) == {"master", "world", "sense", "count", "mission"}
    for m in rep["trajectories"]:
        assert m["max_velocity_ratio"] <= 1 + 1e-6 and m["max_acceleration_ratio"] <= 1.05
    assert "timings" not in rep and set(json.loads((out / "timings.json").read_text())) >= {"plan", "sense"}


def test_e2e_report_is_deterministic(mini, tmp_path, capsys):
    code, _, _ = run(["e2e", "--config", mini / "mini.json", "--out", tmp_path], capsys)
    assert code == 0
    assert (tmp_path / "report.json").read_bytes() == (mini / "e2e" / "report.json").read_bytes()


def test_zero_fruiting_plants(tmp_path):
    rep = run_pipeline(mini_config(fruiting_count=0), tmp_path)
    assert rep.data["truth"]["total"] == 0
    assert rep.data["counts"]["total"] == 0
    assert rep.data["counts"]["relative_error"] is None
    assert rep.data["mission"]["actions"] == 0
    sched = json.loads((tmp_path / "schedule.json").read_text())
    assert all(seq == [] for seq in sched["robots"])


def test_tracked_mode_logs_rms(tmp_path):
    cfg = mini_config(fruiting_count=2)
    cfg = dataclasses.replace(cfg, layout=dataclasses.replace(cfg.layout, n_tables=1),
                              tracking=dataclasses.replace(cfg.tracking, mode="tracked"))
    rep = run_pipeline(cfg, tmp_path)
    tr = rep.data["tracking"]
    assert tr["within_threshold"] and len(tr["rms_per_row"]) == 1
    assert (tmp_path / "row0_tracking.csv").exists()


def test_stage_errors_carry_stage_name(monkeypatch):
    from greenhouse_scout import pipeline

    def boom(*a, **k):
        raise ValueError("no light")

    monkeypatch.setattr(pipeline, "simulate_detections", boom)
    with pytest.raises(PipelineError) as e:
        run_pipeline(mini_config())
    assert e.value.stage == "sense" and "no light" in str(e.value)


def test_e2e_stage_failure_exit_code(tmp_path, capsys, monkeypatch):
    from greenhouse_scout import pipeline

    monkeypatch.setattr(pipeline, "count_yield", lambda *a, **k: 1 / 0)
    save_config(mini_config(), tmp_path / "c.json")
    code, _, err = run(["e2e", "--config", tmp_path / "c.json", "--out", tmp_path], capsys)
    assert code == 1 and "stage 'count'" in err and "ZeroDivisionError" in err


# ----------------------------------------------------------------------------- stage by stage


def test_plan_then_sense_frame_count(mini, tmp_path, capsys):
    code, out, _ = run(["plan", "--config", mini / "mini.json", "--row", 0, "--out", tmp_path], capsys)
    assert code == 0 and "row 0" in out
    traj = Trajectory.from_csv(tmp_path / "row0_trajectory.csv")
    code, out, _ = run(["sense", "--config", mini / "mini.json", "--trajectory", tmp_path / "row0_trajectory.csv",
                        "--out", tmp_path, "--format", "csv"], capsys)
    assert code == 0
    frames = int(out.split()[0])
    assert frames == math.floor(traj.t_end * 10.0) + 1 == len(frame_times(traj.t_end, 10.0))
    assert (tmp_path / "detections.csv").exists() and not (tmp_path / "detections.json").exists()


def test_plan_row_out_of_range(mini, tmp_path, capsys):
    code, _, err = run(["plan", "--config", mini / "mini.json", "--row", 9, "--out", tmp_path], capsys)
    assert code == 1 and "stage 'plan'" in err


def test_simulate_then_sense_from_log(mini, tmp_path, capsys):
    cfg = ["--config", mini / "mini.json", "--out", tmp_path]
    assert run(["plan", "--row", 1, *cfg], capsys)[0] == 0
    code, out, _ = run(["simulate", "--trajectory", tmp_path / "row1_trajectory.csv", *cfg], capsys)
    assert code == 0 and "rms" in out
    assert (tmp_path / "row1_tracking.csv").exists()
    code, out, _ = run(["sense", "--log", tmp_path / "row1_tracking.csv", *cfg], capsys)
    assert code == 0 and int(out.split()[0]) > 0


def test_sense_requires_input(mini, tmp_path, capsys):
    code, _, err = run(["sense", "--config", mini / "mini.json", "--out", tmp_path], capsys)
    assert code == 2 and "--trajectory" in err


def test_count_on_sense_output_is_bit_exact(mini, tmp_path, capsys):
    e2e = mini / "e2e"
    for fmt in ("csv", "json"):
        out = tmp_path / fmt
        code, _, _ = run(["count", "--config", mini / "mini.json", "--detections", e2e / f"detections.{fmt}",
                          "--truth", "--out", out], capsys)
        assert code == 0
        assert (out / "counts.json").read_bytes() == (e2e / "counts.json").read_bytes()
        assert (out / "row0_reachability.csv").read_bytes() == (e2e / "row0_reachability.csv").read_bytes()


def write_log(path, points, pose=None):
    pose = pose or Transform.identity()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETECTION_COLUMNS)
        for k, p in enumerate(points):
            w.writerow([k, 0.1 * k, *pose.pose7(), *p, 0.9])


def test_count_hand_written_single_pepper(tmp_path, capsys):
    layout = build_layout(ScenarioConfig())
    c = layout.rows[0].plant_centers[1]
    offsets = 0.004 * np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]])
    write_log(tmp_path / "one.csv", c + offsets)
    code, out, _ = run(["count", "--detections", tmp_path / "one.csv", "--out", tmp_path], capsys)
    assert code == 0 and out.strip() == "estimated total 1"
    counts = json.loads((tmp_path / "counts.json").read_text())
    assert [r["count"] for r in counts["rows"]] == [1] + [0] * 7


def test_count_parse_errors(tmp_path, capsys):
    write_log(tmp_path / "d.csv", [[1, 2, 3]] * 3)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[2] = lines[2].replace("0.9", "high")
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    code, _, err = run(["count", "--detections", tmp_path / "d.csv", "--out", tmp_path], capsys)
    assert code == 2 and "line 3" in err
    (tmp_path / "d.json").write_text('[{"frame": 0, "t": 0}]')
    code, _, err = run(["count", "--detections", tmp_path / "d.json", "--out", tmp_path], capsys)
    assert code == 2 and "record 0" in err


def test_mission_from_counts(mini, tmp_path, capsys):
    code, out, _ = run(["mission", "--config", mini / "mini.json", "--counts", mini / "e2e" / "counts.json",
                        "--out", tmp_path], capsys)
    assert code == 0 and "feasible True" in out
    assert (tmp_path / "schedule.json").read_bytes() == (mini / "e2e" / "schedule.json").read_bytes()
    assert (tmp_path / "schedule.csv").exists()


def test_mission_without_capable_robot_fails(mini, tmp_path, capsys):
    data = to_dict(mini_config())
    for r in data["mission"]["robots"]:
        r["can_harvest"] = False
    (tmp_path / "c.json").write_text(json.dumps(data))
    code, _, err = run(["mission", "--config", tmp_path / "c.json", "--counts", mini / "e2e" / "counts.json",
                        "--out", tmp_path], capsys)
    assert code == 1 and "stage 'mission'" in err


def test_log_level_env(monkeypatch, tmp_path, capsys):
    import logging

    monkeypatch.setenv("GREENHOUSE_SCOUT_LOG", "debug")
    monkeypatch.setattr(logging.root, "handlers", [])
    assert cli.main(["gen-config", "--out", str(tmp_path)]) == 0
    assert logging.getLogger("greenhouse_scout").getEffectiveLevel() == logging.DEBUG
    logging.root.setLevel(logging.WARNING)
