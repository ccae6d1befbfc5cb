"""Plan a scan of one greenhouse row and time-parameterise it.

The planner puts waypoints on an ellipse around every plant, on both sides of
the table, then a cubic spline joins them and TOPP-RA assigns the fastest
timing that respects the velocity and acceleration box limits. The path and
trajectory CSVs are what `greenhouse-scout simulate` and `sense` consume.
"""

import os

import numpy as np

from _common import output_dir
from greenhouse_scout.config import ScenarioConfig
from greenhouse_scout.pipeline import build_layout, trajectory_margins, write_path_csv
from greenhouse_scout.scanplan import path_clearance, plan_row_trajectory

out = output_dir("scan_plan")
cfg = ScenarioConfig()
layout = build_layout(cfg)
row = layout.rows[0]

path, traj = plan_row_trajectory(row, cfg.scan, cfg.limits, cfg.trajectory.grid_n, cfg.trajectory.dt)
print(f"row 0: {len(row.plants)} plants, {len(path.waypoints)} waypoints, {len(path.stops)} rest points at the turn")
print(f"closest approach to any obstacle: {path_clearance(path, *row.obstacle_boxes()) * 100:.1f} cm")

m = trajectory_margins(traj, cfg.limits)
print(f"duration {m['t_end']:.1f} s over {m['samples']} samples")
print(f"peak |v|/v_max {m['max_velocity_ratio']:.4f}, peak |a|/a_max {m['max_acceleration_ratio']:.4f}")

# greedy forward pass: the squared path speed rides the top of the controllable set wherever it can
g = traj.grid
x, hi = np.asarray(g["x"]), np.asarray(g["hi"])
print(f"grid: {len(x)} points, {np.mean(x >= hi * (1 - 1e-9)):.0%} at the upper bound")

write_path_csv(path, os.path.join(out, "row0_path.csv"))
traj.to_csv(os.path.join(out, "row0_trajectory.csv"))
print(f"wrote {out}/row0_path.csv and row0_trajectory.csv")
