"""Experiment harness: synthetic flights, image interference, metrics.

Queries are rendered from ground-truth poses along a flight, degraded by
a configurable interference model, and localized against a database for a
sweep of candidate counts. Per-candidate trial results depend only on the
query and the derived per-candidate seed, so one pass over the largest
candidate count reproduces every smaller count exactly (prefix property).
Outputs: metrics.csv, a per-query log (queries.csv), and trajectory /
altitude SVG plots.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from . import world as world_mod
from .database import DescriptorDatabase
from .features import describe_local, detect_keypoints, encode_global
from .geodesy import LocalPoint
from .geometry import PoseSE3
from .images import clamp_to_uint8, to_grayscale
from .localize import (
    LocalizeConfig,
    retrieve_top_n,
    run_candidate_trial,
    select_best_trial,
    undistort,
)


@dataclass(frozen=True)
class FlightSpec:
    """Constant-speed waypoint flight sampled at a capture rate."""

    waypoints: tuple
    speed: float  # m/s
    capture_rate: float = 0.5  # Hz
    heading_mode: str = "along-track"  # or "fixed"
    fixed_heading: float = 0.0  # radians, used when heading_mode == "fixed"
    pitch_profile: tuple = (math.radians(45.0),)
    seed: int = 0

    def __post_init__(self):
        if len(self.waypoints) < 2:
            raise ValueError("flight needs at least 2 waypoints")
        if self.speed <= 0 or self.capture_rate <= 0:
            raise ValueError("speed and capture_rate must be positive")
        if self.heading_mode not in ("along-track", "fixed"):
            raise ValueError("heading_mode must be 'along-track' or 'fixed'")
        if not self.pitch_profile:
            raise ValueError("pitch_profile must be non-empty")
        object.__setattr__(self, "waypoints", tuple(self.waypoints))
        object.__setattr__(self, "pitch_profile", tuple(float(p) for p in self.pitch_profile))


@dataclass(frozen=True)
class InterferenceSpec:
    """Image degradation model; scale fields accept (lo, hi) ranges that
    the harness resolves per query."""

    brightness_scale: object = 1.0
    contrast_scale: object = 1.0
    noise_sigma: float = 0.0
    blur_len: int = 0
    flare: tuple | None = None  # ((cu, cv), radius_px, strength)

    def resolve(self, rng: np.random.Generator) -> "InterferenceSpec":
        """Draw any ranged fields into concrete scalars."""

        def draw(v):
            if isinstance(v, (tuple, list)):
                lo, hi = v
                return float(rng.uniform(lo, hi))
            return float(v)

        return replace(self, brightness_scale=draw(self.brightness_scale), contrast_scale=draw(self.contrast_scale))

    def is_identity(self) -> bool:
        return (
            self.brightness_scale == 1.0
            and self.contrast_scale == 1.0
            and self.noise_sigma == 0.0
            and self.blur_len <= 1
            and self.flare is None
        )


def generate_flight(f: FlightSpec) -> list[tuple[float, PoseSE3]]:
    """(time, pose) samples along the flight path.

    Position interpolates the waypoints at constant speed; heading follows
    the track bearing (or stays fixed); pitch steps through the profile
    one entry per sample. Includes both endpoints when the total duration
    is a multiple of the capture interval.
    """
    wp = np.array([[p.x, p.y, p.z] for p in f.waypoints], dtype=float)
    seg = np.diff(wp, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    if np.any(seg_len == 0):
        raise ValueError("repeated consecutive waypoints")
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    total_time = cum[-1] / f.speed
    dt = 1.0 / f.capture_rate
    count = int(math.floor(total_time / dt + 1e-9)) + 1

    samples = []
    for i in range(count):
        t = i * dt
        s = min(t * f.speed, cum[-1])
        k = min(int(np.searchsorted(cum, s, side="right")) - 1, len(seg) - 1)
        frac = (s - cum[k]) / seg_len[k]
        pos = wp[k] + frac * seg[k]
        if f.heading_mode == "along-track":
            heading = math.atan2(seg[k, 0], seg[k, 1]) % (2.0 * math.pi)
        else:
            heading = f.fixed_heading
        pitch = f.pitch_profile[i % len(f.pitch_profile)]
        pose = PoseSE3(LocalPoint(*pos), heading=heading, pitch=pitch, roll=0.0)
        samples.append((t, pose))
    return samples


def perturb_image(image: np.ndarray, s: InterferenceSpec, seed: int = 0) -> np.ndarray:
    """Apply interference in fixed order: contrast/brightness, motion
    blur, flare, Gaussian noise. An identity spec returns a bit-identical
    copy regardless of seed."""
    img = np.asarray(image)
    if img.dtype != np.uint8:
        raise ValueError("expected a uint8 image")
    if isinstance(s.brightness_scale, (tuple, list)) or isinstance(s.contrast_scale, (tuple, list)):
        raise ValueError("ranged interference must be resolved before perturbing")
    if s.is_identity():
        return img.copy()

    out = img.astype(np.float64)
    if s.contrast_scale != 1.0 or s.brightness_scale != 1.0:
        out = ((out - 128.0) * s.contrast_scale + 128.0) * s.brightness_scale
        out = np.clip(out, 0.0, 255.0)
    if s.blur_len > 1:
        kernel = np.ones(int(s.blur_len)) / float(int(s.blur_len))
        for c in range(out.shape[2]) if out.ndim == 3 else [None]:
            plane = out[:, :, c] if c is not None else out
            blurred = ndimage.convolve1d(plane, kernel, axis=1, mode="nearest")
            if c is not None:
                out[:, :, c] = blurred
            else:
                out = blurred
    if s.flare is not None:
        (cu, cv), radius, strength = s.flare
        us, vs = np.meshgrid(np.arange(out.shape[1]), np.arange(out.shape[0]))
        d2 = (us - cu) ** 2 + (vs - cv) ** 2
        blob = strength * np.maximum(0.0, 1.0 - d2 / (radius * radius))
        out = np.clip(out + (blob[:, :, None] if out.ndim == 3 else blob), 0.0, 255.0)
    if s.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, s.noise_sigma, size=out.shape)
    return clamp_to_uint8(out)


@dataclass(frozen=True)
class QueryRecord:
    """One (candidate count, query) outcome in the per-query log."""

    n: int
    query_index: int
    time_s: float
    true_pose: PoseSE3
    status: str  # localized | unlocalized
    reason: str = ""
    est_pose: PoseSE3 | None = None
    err_3d: float | None = None
    err_2d: float | None = None
    inliers: int | None = None
    candidate_id: int | None = None
    candidate_pos: tuple | None = None  # grid position of the matched candidate
    correction_m: float | None = None


@dataclass(frozen=True)
class MetricsRow:
    n: int
    rmse_3d: float | None
    rmse_2d: float | None
    recall_pct: float
    localized: int
    total: int


@dataclass
class MetricsTable:
    rows: list[MetricsRow]
    log: list[QueryRecord]
    flight: FlightSpec = None
    interference: InterferenceSpec = None


def pose_errors(true_pose: PoseSE3, est_pose: PoseSE3) -> tuple[float, float]:
    """(3D, 2D) position error in meters; 2D drops the altitude term."""
    dx = est_pose.position.x - true_pose.position.x
    dy = est_pose.position.y - true_pose.position.y
    dz = est_pose.position.z - true_pose.position.z
    return math.sqrt(dx * dx + dy * dy + dz * dz), math.hypot(dx, dy)


def metrics_from_log(log: list[QueryRecord], n_values) -> list[MetricsRow]:
    """Recall and RMSE per candidate count; RMSE over localized queries only."""
    rows = []
    for n in n_values:
        recs = [r for r in log if r.n == n]
        loc = [r for r in recs if r.status == "localized"]
        if loc:
            rmse3 = math.sqrt(sum(r.err_3d**2 for r in loc) / len(loc))
            rmse2 = math.sqrt(sum(r.err_2d**2 for r in loc) / len(loc))
        else:
            rmse3 = rmse2 = None
        recall = 100.0 * len(loc) / len(recs) if recs else 0.0
        rows.append(MetricsRow(n, rmse3, rmse2, recall, len(loc), len(recs)))
    return rows


def run_experiment(
    db: DescriptorDatabase,
    terrain: world_mod.Terrain,
    flight: FlightSpec,
    interference: InterferenceSpec,
    n_values: list[int],
    seed: int = 0,
    cfg: LocalizeConfig | None = None,
    progress=None,
) -> MetricsTable:
    """Render, perturb and localize every flight sample for each n.

    Candidate trials are computed once for max(n); smaller counts reuse
    the prefix, which equals running them independently because trial
    seeds derive from (query seed XOR candidate id). Per-query seeds are
    (run seed XOR query index), making results schedule-independent.
    """
    if cfg is None:
        cfg = LocalizeConfig()
    n_values = list(n_values)
    n_max = max(n_values)
    samples = generate_flight(flight)
    log: list[QueryRecord] = []

    for qidx, (t, pose) in enumerate(samples):
        qseed = seed ^ qidx
        view = world_mod.render(terrain, pose, db.camera)
        rng = np.random.default_rng(qseed)
        concrete = interference.resolve(rng)
        img = perturb_image(view.color, concrete, seed=qseed)

        ud = undistort(img, db.camera)
        gray = to_grayscale(ud)
        feats = describe_local(gray, detect_keypoints(gray))
        g = encode_global(feats, db.codebook)
        ranked = retrieve_top_n(g, db, n_max)
        trials = [
            run_candidate_trial(feats, db, cid, dist, cfg, qseed) for cid, dist in ranked
        ]

        for n in n_values:
            best = select_best_trial(trials[:n])
            if best is None:
                reason = (
                    "no-candidates"
                    if not ranked
                    else ("all-gated" if any(tr.converged for tr in trials[:n]) else "no-convergence")
                )
                log.append(
                    QueryRecord(
                        n=n, query_index=qidx, time_s=t, true_pose=pose, status="unlocalized", reason=reason
                    )
                )
                continue
            est = best.pnp.pose
            err3, err2 = pose_errors(pose, est)
            cand_pos = db.entries[best.candidate_id].pose.position
            log.append(
                QueryRecord(
                    n=n,
                    query_index=qidx,
                    time_s=t,
                    true_pose=pose,
                    status="localized",
                    est_pose=est,
                    err_3d=err3,
                    err_2d=err2,
                    inliers=best.pnp.num_inliers,
                    candidate_id=best.candidate_id,
                    candidate_pos=(cand_pos.x, cand_pos.y),
                    correction_m=best.correction,
                )
            )
        if progress:
            progress(qidx + 1, len(samples))

    rows = metrics_from_log(log, n_values)
    return MetricsTable(rows=rows, log=log, flight=flight, interference=interference)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


QUERY_CSV_FIELDS = [
    "n",
    "query_index",
    "time_s",
    "true_x",
    "true_y",
    "true_z",
    "true_heading_rad",
    "true_pitch_rad",
    "true_roll_rad",
    "status",
    "reason",
    "est_x",
    "est_y",
    "est_z",
    "est_heading_rad",
    "est_pitch_rad",
    "est_roll_rad",
    "err_3d_m",
    "err_2d_m",
    "inliers",
    "candidate_id",
    "candidate_x",
    "candidate_y",
    "correction_m",
]


def export_report(m: MetricsTable, out_dir: str, plot_n: int | None = None) -> dict:
    """Write metrics.csv, queries.csv and the trajectory/altitude SVGs.

    The SVGs plot one candidate count: ``plot_n`` if given, else 3 when
    present in the table, else the first row. Returns the file paths.
    """
    if not m.rows:
        raise ValueError("empty metrics table")
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    mpath = os.path.join(out_dir, "metrics.csv")
    with open(mpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "rmse3d_m", "rmse2d_m", "recall_pct"])
        for row in m.rows:
            w.writerow([row.n, _fmt(row.rmse_3d), _fmt(row.rmse_2d), _fmt(row.recall_pct)])
    paths["metrics"] = mpath

    qpath = os.path.join(out_dir, "queries.csv")
    with open(qpath, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(QUERY_CSV_FIELDS)
        for r in m.log:
            tp = r.true_pose
            est = r.est_pose
            w.writerow(
                [
                    r.n,
                    r.query_index,
                    _fmt(r.time_s),
                    _fmt(tp.position.x),
                    _fmt(tp.position.y),
                    _fmt(tp.position.z),
                    _fmt(tp.heading),
                    _fmt(tp.pitch),
                    _fmt(tp.roll),
                    r.status,
                    r.reason,
                    _fmt(est.position.x if est else None),
                    _fmt(est.position.y if est else None),
                    _fmt(est.position.z if est else None),
                    _fmt(est.heading if est else None),
                    _fmt(est.pitch if est else None),
                    _fmt(est.roll if est else None),
                    _fmt(r.err_3d),
                    _fmt(r.err_2d),
                    _fmt(r.inliers),
                    _fmt(r.candidate_id),
                    _fmt(r.candidate_pos[0] if r.candidate_pos else None),
                    _fmt(r.candidate_pos[1] if r.candidate_pos else None),
                    _fmt(r.correction_m),
                ]
            )
    paths["queries"] = qpath

    available = [row.n for row in m.rows]
    if plot_n is None:
        plot_n = 3 if 3 in available else available[0]
    recs = [r for r in m.log if r.n == plot_n]
    paths["trajectory"] = _write_trajectory_svg(os.path.join(out_dir, "trajectory.svg"), recs)
    paths["altitude"] = _write_altitude_svg(os.path.join(out_dir, "altitude.svg"), recs)
    return paths


def _svg_header(width, height):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )


def _write_trajectory_svg(path, recs):
    """Top view: ground-truth path, candidate grid positions (red crosses),
    refined positions (yellow dots), correspondence segments (orange)."""
    size = 640.0
    margin = 40.0
    xs = [r.true_pose.position.x for r in recs]
    ys = [r.true_pose.position.y for r in recs]
    for r in recs:
        if r.status == "localized":
            xs += [r.est_pose.position.x, r.candidate_pos[0]]
            ys += [r.est_pose.position.y, r.candidate_pos[1]]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    span = max(x1 - x0, y1 - y0, 1.0)
    scale = (size - 2 * margin) / span

    def sx(x):
        return margin + (x - x0) * scale

    def sy(y):
        return size - margin - (y - y0) * scale  # north up

    parts = [_svg_header(size, size)]
    pts = " ".join(
        f"{sx(r.true_pose.position.x):.2f},{sy(r.true_pose.position.y):.2f}" for r in recs
    )
    parts.append(f'<polyline points="{pts}" fill="none" stroke="blue" stroke-width="1.5"/>\n')
    for r in recs:
        if r.status != "localized":
            continue
        cx, cy = sx(r.candidate_pos[0]), sy(r.candidate_pos[1])
        ex, ey = sx(r.est_pose.position.x), sy(r.est_pose.position.y)
        parts.append(
            f'<line class="correspondence" x1="{cx:.2f}" y1="{cy:.2f}" x2="{ex:.2f}" y2="{ey:.2f}" '
            f'stroke="orange" stroke-width="1"/>\n'
        )
        parts.append(
            f'<path class="initial" d="M {cx - 4:.2f} {cy - 4:.2f} L {cx + 4:.2f} {cy + 4:.2f} '
            f'M {cx - 4:.2f} {cy + 4:.2f} L {cx + 4:.2f} {cy - 4:.2f}" stroke="red" stroke-width="1.5" fill="none"/>\n'
        )
        parts.append(
            f'<circle class="refined" cx="{ex:.2f}" cy="{ey:.2f}" r="3" fill="gold" stroke="black" stroke-width="0.5"/>\n'
        )
    parts.append("</svg>\n")
    with open(path, "w") as fh:
        fh.write("".join(parts))
    return path


def _write_altitude_svg(path, recs):
    """Inferred vs ground-truth altitude against distance traveled."""
    width, height = 720.0, 280.0
    margin = 45.0
    dist = []
    d = 0.0
    prev = None
    for r in sorted(recs, key=lambda r: r.query_index):
        p = r.true_pose.position
        if prev is not None:
            d += math.hypot(p.x - prev.x, p.y - prev.y)
        dist.append(d)
        prev = p
    recs = sorted(recs, key=lambda r: r.query_index)
    alts = [r.true_pose.position.z for r in recs]
    est_alts = [r.est_pose.position.z for r in recs if r.status == "localized"]
    zmin = min(alts + est_alts) - 5 if est_alts else min(alts) - 5
    zmax = max(alts + est_alts) + 5 if est_alts else max(alts) + 5
    dmax = max(dist[-1], 1.0)

    def sx(x):
        return margin + x / dmax * (width - 2 * margin)

    def sy(z):
        return height - margin - (z - zmin) / (zmax - zmin) * (height - 2 * margin)

    parts = [_svg_header(width, height)]
    pts = " ".join(f"{sx(di):.2f},{sy(z):.2f}" for di, z in zip(dist, alts))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="blue" stroke-width="1.5"/>\n')
    for di, r in zip(dist, recs):
        if r.status != "localized":
            continue
        parts.append(
            f'<circle class="inferred" cx="{sx(di):.2f}" cy="{sy(r.est_pose.position.z):.2f}" r="3" '
            f'fill="none" stroke="red" stroke-width="1.2"/>\n'
        )
    parts.append(
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" y2="{height - margin}" stroke="black"/>\n'
        f'<line x1="{margin}" y1="{margin}" x2="{margin}" y2="{height - margin}" stroke="black"/>\n'
    )
    parts.append("</svg>\n")
    with open(path, "w") as fh:
        fh.write("".join(parts))
    return path


def flight_from_json(path_or_dict) -> FlightSpec:
    """Read a FlightSpec from a JSON file (or parsed dict).

    Keys: waypoints [[x,y,z],...], speed_mps, capture_rate_hz,
    heading_mode, fixed_heading_deg, pitch_profile_deg, seed.
    """
    if isinstance(path_or_dict, dict):
        d = path_or_dict
    else:
        with open(path_or_dict) as fh:
            d = json.load(fh)
    return FlightSpec(
        waypoints=tuple(LocalPoint(*w) for w in d["waypoints"]),
        speed=d["speed_mps"],
        capture_rate=d.get("capture_rate_hz", 0.5),
        heading_mode=d.get("heading_mode", "along-track"),
        fixed_heading=math.radians(d.get("fixed_heading_deg", 0.0)),
        pitch_profile=tuple(math.radians(p) for p in d.get("pitch_profile_deg", [45.0])),
        seed=d.get("seed", 0),
    )


def interference_from_json(path_or_dict) -> InterferenceSpec:
    """Read an InterferenceSpec from a JSON file (or parsed dict); scale
    fields may be scalars or [lo, hi] ranges."""
    if isinstance(path_or_dict, dict):
        d = path_or_dict
    else:
        with open(path_or_dict) as fh:
            d = json.load(fh)

    def scale(v):
        return tuple(v) if isinstance(v, list) else v

    flare = d.get("flare")
    if flare is not None:
        flare = (tuple(flare["center"]), flare["radius"], flare["strength"])
    return InterferenceSpec(
        brightness_scale=scale(d.get("brightness_scale", 1.0)),
        contrast_scale=scale(d.get("contrast_scale", 1.0)),
        noise_sigma=d.get("noise_sigma", 0.0),
        blur_len=d.get("blur_len", 0),
        flare=flare,
    )
