"""Command-line front end: build-db, query, eval, render.

Angles are degrees on the command line and radians internally. Exit
status: 0 success, 2 query not localized, 1 any error.
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import database, experiment, features, images, world
from .geodesy import GeoPoint, LocalFrame, LocalPoint
from .geometry import CameraModel, PoseSE3, camera_from_fov
from .localize import LocalizeConfig, RetrievalConfig, localize
from .posegrid import GridSpec, enumerate_poses


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _floats(text, count=None, name="value"):
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"malformed {name}: {text!r}")
    if count is not None and len(vals) != count:
        raise UsageError(f"{name} needs {count} comma-separated numbers, got {len(vals)}")
    return vals


def _parse_camera(text) -> CameraModel:
    w, h, hfov = _floats(text, 3, "--camera")
    return camera_from_fov(int(w), int(h), math.radians(hfov))


DEFAULT_CAMERA = "640,480,84"


def _build_parser() -> _Parser:
    p = _Parser(prog="skyloc", description="Aerial visual geo-localization toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-db", help="render a pose grid and build a descriptor database")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--terrain", help="terrain file prefix or .sltr path")
    src.add_argument("--terrain-seed", type=int, help="generate a synthetic terrain from a seed")
    b.add_argument("--terrain-extent", default="1000,1000", help="generated terrain size m, EX,EY")
    b.add_argument("--terrain-cell", type=float, default=2.0, help="generated heightmap cell m")
    b.add_argument("--area", required=True, help="pose area X0,Y0,X1,Y1 (m, local frame)")
    b.add_argument("--spacing", type=float, required=True, help="grid spacing m")
    b.add_argument("--elevations", required=True, help="comma-separated elevations m")
    b.add_argument("--headings", type=int, required=True, help="heading count per revolution")
    b.add_argument("--pitches", required=True, help="comma-separated pitch angles deg")
    cbs = b.add_mutually_exclusive_group(required=True)
    cbs.add_argument("--codebook", help="existing codebook file")
    cbs.add_argument("--train-codebook", action="store_true", help="train a codebook from sample views")
    b.add_argument("--codebook-seed", type=int, default=0)
    b.add_argument("--camera", default=DEFAULT_CAMERA, help="W,H,HFOV_DEG (default %(default)s)")
    b.add_argument("--origin", default="0,0,0", help="frame origin LAT,LON,ALT")
    b.add_argument("--depth-stride", type=int, default=database.DEFAULT_DEPTH_STRIDE)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--force", action="store_true", help="overwrite an existing database")
    b.add_argument("--out", required=True, help="output database directory")

    q = sub.add_parser("query", help="localize one query image against a database")
    q.add_argument("--db", required=True)
    q.add_argument("--image", required=True, help="query image (binary PPM)")
    q.add_argument("--candidates", type=int, default=3)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--refine-threshold", type=float, default=None, help="meters; default 2x grid spacing")
    q.add_argument("--json", dest="json_out", help="also write the result JSON to this path")

    e = sub.add_parser("eval", help="run a flight experiment and write metric reports")
    e.add_argument("--db", required=True)
    e.add_argument("--flight", required=True, help="flight spec JSON")
    e.add_argument("--interference", help="interference spec JSON (default: identity)")
    e.add_argument("--candidates-sweep", default="50,30,20,10,3,1")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--terrain", help="terrain prefix (default: the copy inside the database)")
    e.add_argument("--refine-threshold", type=float, default=None)
    e.add_argument("--out", required=True)

    r = sub.add_parser("render", help="render one view of a terrain")
    r.add_argument("--terrain", required=True)
    r.add_argument("--pose", required=True, help="x,y,z,heading,pitch,roll (m and deg)")
    r.add_argument("--camera", default=DEFAULT_CAMERA, help="W,H,HFOV_DEG")
    r.add_argument("--out", required=True, help="output PPM path")
    r.add_argument("--depth", help="also write the Z-depth raster to this path")
    return p


def _load_terrain_arg(args) -> world.Terrain:
    if getattr(args, "terrain", None):
        return world.load_terrain(args.terrain)
    ex, ey = _floats(args.terrain_extent, 2, "--terrain-extent")
    return world.generate_terrain(args.terrain_seed, (ex, ey), args.terrain_cell)


def _cmd_build_db(args) -> int:
    out = args.out
    if os.path.exists(os.path.join(out, "manifest.json")) and not args.force:
        raise UsageError(f"{out} already holds a database; use --force to overwrite")
    terrain = _load_terrain_arg(args)
    cam = _parse_camera(args.camera)
    x0, y0, x1, y1 = _floats(args.area, 4, "--area")
    grid = GridSpec(
        area=(x0, y0, x1, y1),
        spacing_xy=args.spacing,
        elevations=tuple(_floats(args.elevations, name="--elevations")),
        headings=args.headings,
        pitches=tuple(math.radians(p) for p in _floats(args.pitches, name="--pitches")),
    )
    lat, lon, alt = _floats(args.origin, 3, "--origin")
    frame = LocalFrame(origin=GeoPoint(lat, lon, alt))

    if args.codebook:
        codebook = features.load_codebook(args.codebook)
    else:
        codebook = train_codebook_from_grid(terrain, grid, cam, seed=args.codebook_seed)

    n = grid.pose_count()
    print(f"building database: {n} poses", flush=True)

    def progress(done, total):
        if done % max(1, total // 10) == 0 or done == total:
            print(f"  {done}/{total} poses", flush=True)

    db = database.build_database(
        terrain,
        grid,
        cam,
        frame,
        codebook,
        out,
        depth_stride=args.depth_stride,
        threads=args.threads,
        progress=progress,
    )
    os.makedirs(os.path.join(out, "terrain"), exist_ok=True)
    world.save_terrain(terrain, os.path.join(out, "terrain", "terrain"))
    est = db.size_estimate_bytes()
    print(f"N = {db.size} entries, D = {db.dim}; estimated size {est / 1e6:.1f} MB")
    return 0


def train_codebook_from_grid(
    terrain: world.Terrain,
    grid: GridSpec,
    cam: CameraModel,
    seed: int = 0,
    k: int = features.DEFAULT_CODEBOOK_SIZE,
    sample_views: int = 24,
) -> features.Codebook:
    """Train a codebook on descriptors pooled from a spread of grid views."""
    poses = enumerate_poses(grid)
    step = max(1, len(poses) // sample_views)
    samples = []
    for pose in poses[::step][:sample_views]:
        view = world.render(terrain, pose, cam)
        gray = images.to_grayscale(view.color)
        feats = features.describe_local(gray, features.detect_keypoints(gray))
        if feats:
            samples.append(features.descriptor_matrix(feats))
    if not samples:
        raise ValueError("no descriptors found in sample views; terrain too plain?")
    pool = np.vstack(samples)
    if len(pool) < k:
        raise ValueError(f"only {len(pool)} descriptors sampled; need >= {k}")
    return features.build_codebook(pool, k=k, seed=seed)


def _default_cfg(db, candidates, refine_threshold):
    if refine_threshold is None:
        refine_threshold = 2.0 * db.grid.spacing_xy
    return LocalizeConfig(
        retrieval=RetrievalConfig(n=candidates),
        refine_threshold=refine_threshold,
    )


def _cmd_query(args) -> int:
    db = database.load_database(args.db)
    image = images.read_ppm(args.image)
    cfg = _default_cfg(db, args.candidates, args.refine_threshold)
    result = localize(image, db, cfg, seed=args.seed)
    payload = result.to_json_dict()
    text = json.dumps(payload, indent=1, sort_keys=True)
    print(text)
    if args.json_out:
        with open(args.json_out, "w") as fh:
            fh.write(text + "\n")
    return 0 if payload["status"] == "localized" else 2


def _cmd_eval(args) -> int:
    db = database.load_database(args.db)
    terrain_path = args.terrain or os.path.join(args.db, "terrain", "terrain")
    terrain = world.load_terrain(terrain_path)
    flight = experiment.flight_from_json(args.flight)
    interference = (
        experiment.interference_from_json(args.interference)
        if args.interference
        else experiment.InterferenceSpec()
    )
    n_values = [int(x) for x in args.candidates_sweep.split(",")]
    cfg = _default_cfg(db, max(n_values), args.refine_threshold)
    table = experiment.run_experiment(
        db, terrain, flight, interference, n_values, seed=args.seed, cfg=cfg
    )
    paths = experiment.export_report(table, args.out)
    for row in table.rows:
        rmse = f"{row.rmse_3d:.3f}" if row.rmse_3d is not None else "-"
        print(f"n={row.n:>3}  rmse3d={rmse:>8} m  recall={row.recall_pct:6.2f} %")
    print(f"reports in {args.out}: " + ", ".join(sorted(os.path.basename(p) for p in paths.values())))
    return 0


def _cmd_render(args) -> int:
    vals = _floats(args.pose, 6, "--pose")
    pose = PoseSE3(
        LocalPoint(vals[0], vals[1], vals[2]),
        heading=math.radians(vals[3]),
        pitch=math.radians(vals[4]),
        roll=math.radians(vals[5]),
    )
    cam = _parse_camera(args.camera)
    terrain = world.load_terrain(args.terrain)
    view = world.render(terrain, pose, cam)
    images.write_ppm(args.out, view.color)
    if args.depth:
        database.write_depth(args.depth, view.depth, stride=1)
    print(f"wrote {args.out}" + (f" and {args.depth}" if args.depth else ""))
    return 0


_COMMANDS = {
    "build-db": _cmd_build_db,
    "query": _cmd_query,
    "eval": _cmd_eval,
    "render": _cmd_render,
}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, database.DatabaseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
