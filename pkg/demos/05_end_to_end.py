"""The whole scouting mission for one seed, stage by stage.

Equivalent to `greenhouse-scout e2e --seed 5 --out DIR`, except that the
vehicle follows the planned trajectory exactly (tracking off) so the demo runs
in about a minute. Pass --tracked to fly every row in closed loop.
"""

import dataclasses
import json
import sys

from _common import output_dir
from greenhouse_scout.config import ScenarioConfig
from greenhouse_scout.pipeline import run_pipeline

tracked = "--tracked" in sys.argv
if tracked:
    sys.argv.remove("--tracked")
out = output_dir("end_to_end")
cfg = ScenarioConfig(seed=5)
if not tracked:
    cfg = dataclasses.replace(cfg, tracking=dataclasses.replace(cfg.tracking, mode="planned"))

rep = run_pipeline(cfg, out)
d = rep.data
print(f"ground truth {d['truth']['total']:4d}, per row {d['truth']['per_row']}")
print(f"estimate     {d['counts']['total']:4d}, per row {d['counts']['per_row']}")
print(f"relative error {d['counts']['relative_error']:.3f}")
print(f"sensing: {d['sensing']['frames']} frames, {d['sensing']['detections']} detections")
t = d["trajectories"]
print(f"scan: {sum(m['t_end'] for m in t):.0f} s of flight over {len(t)} rows")
if tracked:
    print(f"tracking RMS worst row {d['tracking']['rms_max'] * 100:.2f} cm")
m = d["mission"]
print(f"harvest: {m['actions']} actions, makespan {m['makespan']:.0f} s")
print("stage timings (s):", json.dumps({k: round(v, 1) for k, v in rep.timings.items()}))
print(f"artifacts in {out}")
