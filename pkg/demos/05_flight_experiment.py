"""Flight experiment: interference, candidate-count sweep, report files.

Reuses the database from demo 04 (building it if missing), flies a short
two-leg path with image interference, sweeps the retrieval candidate
count, and writes metrics.csv / queries.csv / trajectory.svg /
altitude.svg into demos/output/.
"""

import math
import os
import runpy
import tempfile

from skyloc import (
    FlightSpec,
    InterferenceSpec,
    LocalPoint,
    export_report,
    generate_terrain,
    load_database,
    run_experiment,
)
from skyloc.localize import LocalizeConfig

db_dir = os.path.join(tempfile.gettempdir(), "skyloc_demo_db")
if not os.path.exists(os.path.join(db_dir, "manifest.json")):
    print("building the demo database first (demo 04)...")
    runpy.run_path(os.path.join(os.path.dirname(__file__), "04_build_and_localize.py"))

db = load_database(db_dir)
terrain = generate_terrain(seed=42, extent=(600.0, 600.0), cell_size=2.0)

flight = FlightSpec(
    waypoints=(LocalPoint(-50, -40, 62), LocalPoint(50, -10, 70), LocalPoint(-30, 45, 78)),
    speed=6.0,
    capture_rate=0.5,
    pitch_profile=(math.radians(45.0),),
)
interference = InterferenceSpec(noise_sigma=3.0, brightness_scale=(0.9, 1.1), blur_len=3)

table = run_experiment(
    db,
    terrain,
    flight,
    interference,
    n_values=[10, 3, 1],
    seed=2024,
    cfg=LocalizeConfig(refine_threshold=40.0),
    progress=lambda done, total: print(f"  query {done}/{total}", flush=True)
    if done % 10 == 0
    else None,
)

print("\n n   rmse3d    rmse2d    recall")
for row in table.rows:
    r3 = f"{row.rmse_3d:7.3f}" if row.rmse_3d is not None else "      -"
    r2 = f"{row.rmse_2d:7.3f}" if row.rmse_2d is not None else "      -"
    print(f"{row.n:3d} {r3} m {r2} m {row.recall_pct:6.1f} % ({row.localized}/{row.total})")

out = os.path.join(os.path.dirname(__file__), "output", "experiment")
paths = export_report(table, out)
print(f"\nreport files: {', '.join(sorted(os.path.basename(p) for p in paths.values()))}")
print(f"under {out}")
