"""Online localization pipeline.

A query image is undistorted and resampled to the database camera,
encoded into local features and a global descriptor, matched against the
global-descriptor array by exact L2 distance, and the top-n candidates
each get a local-matching + depth-lifting + PnP-RANSAC trial. Trials that
converge and whose refined position stays within the refinement threshold
of the candidate's grid position compete by inlier count; the winner is
converted to geographic coordinates.
"""

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import features as feat
from .database import DatabaseEntry, DescriptorDatabase
from .geodesy import GeoPoint, LocalPoint, local_to_geo
from .geometry import CameraModel
from .images import area_resample, clamp_to_uint8, to_grayscale
from .pnp import Correspondence2D3D, PnPConfig, PnPResult, solve_pnp_ransac


@dataclass(frozen=True)
class RetrievalConfig:
    n: int = 3

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("candidate count must be >= 1")


@dataclass(frozen=True)
class LocalizeConfig:
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    pnp: PnPConfig = field(default_factory=PnPConfig)
    refine_threshold: float = 20.0  # meters, horizontal; default 2x grid spacing

    def __post_init__(self):
        if self.refine_threshold <= 0:
            raise ValueError("refine_threshold must be positive")


@dataclass(frozen=True)
class LocalizationResult:
    pose_geo: GeoPoint
    heading: float  # radians
    pitch: float
    roll: float
    pose_local: "object"  # PoseSE3
    inliers: int
    candidate_id: int
    correction: float  # horizontal meters from candidate grid position
    timings_ms: dict

    def to_json_dict(self) -> dict:
        return {
            "status": "localized",
            "lat": self.pose_geo.lat,
            "lon": self.pose_geo.lon,
            "alt": self.pose_geo.alt,
            "heading_deg": math.degrees(self.heading),
            "pitch_deg": math.degrees(self.pitch),
            "roll_deg": math.degrees(self.roll),
            "inliers": self.inliers,
            "candidate_id": self.candidate_id,
            "correction_m": self.correction,
            "stage_timings_ms": self.timings_ms,
        }


@dataclass(frozen=True)
class Unlocalized:
    reason: str  # no-candidates | no-convergence | all-gated
    timings_ms: dict

    def to_json_dict(self) -> dict:
        return {
            "status": "unlocalized",
            "reason": self.reason,
            "stage_timings_ms": self.timings_ms,
        }


def undistort(image: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Undistort (and if needed area-downsample) a query image to the camera.

    The radial model maps an ideal normalized radius r to a distorted
    radius r*(1 + k1 r^2 + k2 r^4); each output pixel samples the source
    bilinearly at its distorted position. With k1 = k2 = 0 and matching
    dimensions the image is returned as an identical copy.
    """
    img = np.asarray(image)
    h, w = img.shape[:2]
    if (w, h) != (cam.width, cam.height):
        resampled = area_resample(img, cam.width, cam.height)
    else:
        resampled = img.astype(np.float64)
    if cam.k1 == 0.0 and cam.k2 == 0.0:
        if img.dtype == np.uint8 and (w, h) == (cam.width, cam.height):
            return img.copy()
        return clamp_to_uint8(resampled) if img.dtype == np.uint8 else resampled

    us, vs = np.meshgrid(np.arange(cam.width, dtype=np.float64), np.arange(cam.height, dtype=np.float64))
    x = (us - cam.cx) / cam.fx
    y = (vs - cam.cy) / cam.fy
    r2 = x * x + y * y
    factor = 1.0 + cam.k1 * r2 + cam.k2 * r2 * r2
    src_u = cam.fx * x * factor + cam.cx
    src_v = cam.fy * y * factor + cam.cy

    out = _bilinear_gather(resampled, src_u, src_v)
    return clamp_to_uint8(out) if img.dtype == np.uint8 else out


def _bilinear_gather(img, us, vs):
    """Bilinear samples of img at float coordinates; out-of-source is black."""
    h, w = img.shape[:2]
    inside = (us >= 0) & (us <= w - 1) & (vs >= 0) & (vs <= h - 1)
    ucl = np.clip(us, 0, w - 1.000001)
    vcl = np.clip(vs, 0, h - 1.000001)
    u0 = np.floor(ucl).astype(int)
    v0 = np.floor(vcl).astype(int)
    fu = ucl - u0
    fv = vcl - v0
    if img.ndim == 3:
        fu = fu[:, :, None]
        fv = fv[:, :, None]
        inside = inside[:, :, None]
    vals = (
        img[v0, u0] * (1 - fv) * (1 - fu)
        + img[v0, u0 + 1] * (1 - fv) * fu
        + img[v0 + 1, u0] * fv * (1 - fu)
        + img[v0 + 1, u0 + 1] * fv * fu
    )
    return np.where(inside, vals, 0.0)


def retrieve_top_n(query_global: np.ndarray, db: DescriptorDatabase, n: int) -> list[tuple[int, float]]:
    """Exact L2 retrieval over all database rows, ascending by distance.

    Ties break toward the lower entry id; returns min(n, N) results.
    Distances are accumulated in float64; the expansion
    |g - q|^2 = |g|^2 - 2 g.q + |q|^2 matches an explicit brute-force
    difference to ~1e-14, far below any realistic distance gap.
    """
    q = np.asarray(query_global, dtype=np.float64).ravel()
    g = db.globals64
    if q.shape[0] != g.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} != database dim {g.shape[1]}")
    d2 = np.maximum(db.row_sq_norms - 2.0 * (g @ q) + float(q @ q), 0.0)
    return _rank_ascending(np.sqrt(d2), n)


def l2_topn(query: np.ndarray, rows: np.ndarray, n: int) -> list[tuple[int, float]]:
    """Standalone exact top-n over a raw row array (same contract as
    :func:`retrieve_top_n`)."""
    q = np.asarray(query, dtype=np.float64).ravel()
    g = rows.astype(np.float64, copy=False)
    if q.shape[0] != g.shape[1]:
        raise ValueError(f"query dim {q.shape[0]} != database dim {g.shape[1]}")
    d2 = np.maximum(np.einsum("ij,ij->i", g, g) - 2.0 * (g @ q) + float(q @ q), 0.0)
    return _rank_ascending(np.sqrt(d2), n)


def _rank_ascending(dist: np.ndarray, n: int) -> list[tuple[int, float]]:
    order = np.lexsort((np.arange(len(dist)), dist))
    top = order[: min(n, len(dist))]
    return [(int(i), float(dist[i])) for i in top]


def lift_correspondences(
    matches: list[feat.Match],
    query_features: list[feat.LocalFeature],
    db_entry: DatabaseEntry,
    cam: CameraModel,
) -> list[Correspondence2D3D]:
    """Turn 2D-2D matches into 2D-3D pairs using the entry's depth map.

    The database keypoint's Z-depth (nearest stored sample) back-projects
    it into the map frame through the entry's pose; matches on invalid
    (zero) depth are skipped.
    """
    if not matches:
        return []
    r = db_entry.pose.rotation_c2w()
    c = db_entry.pose.position_array()
    db_feats = db_entry.local_features
    out = []
    for m in matches:
        kp_db = db_feats[m.index_b].keypoint
        z = db_entry.depth_at(kp_db.u, kp_db.v)
        if z <= 0.0:
            continue
        x_n = (kp_db.u - cam.cx) / cam.fx
        y_n = (kp_db.v - cam.cy) / cam.fy
        p_cam = np.array([x_n * z, y_n * z, z])
        p_world = r @ p_cam + c
        kp_q = query_features[m.index_a].keypoint
        out.append(
            Correspondence2D3D(
                pixel=(kp_q.u, kp_q.v),
                point=LocalPoint(float(p_world[0]), float(p_world[1]), float(p_world[2])),
            )
        )
    return out


@dataclass(frozen=True)
class CandidateTrial:
    """Outcome of one candidate's local-match + PnP attempt."""

    candidate_id: int
    retrieval_distance: float
    converged: bool
    gated: bool = False
    pnp: PnPResult | None = None
    correction: float = float("inf")

    @property
    def survives(self) -> bool:
        return self.converged and not self.gated


def run_candidate_trial(
    query_features: list[feat.LocalFeature],
    db: DescriptorDatabase,
    candidate_id: int,
    retrieval_distance: float,
    cfg: LocalizeConfig,
    seed: int,
) -> CandidateTrial:
    """Match, lift and solve one retrieval candidate.

    The RANSAC seed is derived as seed XOR candidate id, so trial outcomes
    do not depend on how many candidates run or in what order.
    """
    entry = db.entries[candidate_id]
    matches = feat.match_local(query_features, entry.local_features)
    pairs = lift_correspondences(matches, query_features, entry, db.camera)
    if len(pairs) < 4:
        return CandidateTrial(candidate_id, retrieval_distance, converged=False)
    result = solve_pnp_ransac(pairs, db.camera, cfg.pnp, seed=seed ^ candidate_id)
    if result is None:
        return CandidateTrial(candidate_id, retrieval_distance, converged=False)
    grid_pos = entry.pose.position
    est = result.pose.position
    correction = math.hypot(est.x - grid_pos.x, est.y - grid_pos.y)
    gated = correction > cfg.refine_threshold
    return CandidateTrial(
        candidate_id,
        retrieval_distance,
        converged=True,
        gated=gated,
        pnp=result,
        correction=correction,
    )


def select_best_trial(trials: list[CandidateTrial]) -> CandidateTrial | None:
    """Most inliers among surviving trials; ties by smaller correction."""
    survivors = [t for t in trials if t.survives]
    if not survivors:
        return None
    return min(survivors, key=lambda t: (-t.pnp.num_inliers, t.correction, t.candidate_id))


def localize(
    image: np.ndarray,
    db: DescriptorDatabase,
    cfg: LocalizeConfig = LocalizeConfig(),
    seed: int = 0,
) -> LocalizationResult | Unlocalized:
    """Full pipeline: undistort, encode, retrieve, per-candidate PnP, gate.

    Returns an Unlocalized marker with a reason (no-candidates /
    no-convergence / all-gated) when no trial survives. Identical inputs
    and seed give an identical result apart from the wall-clock timings.
    """
    timings = {}
    t0 = time.perf_counter()
    ud = undistort(image, db.camera)
    timings["undistort"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    gray = to_grayscale(ud)
    kps = feat.detect_keypoints(gray)
    query_features = feat.describe_local(gray, kps)
    timings["features"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    query_global = feat.encode_global(query_features, db.codebook)
    timings["encode"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    ranked = retrieve_top_n(query_global, db, cfg.retrieval.n)
    timings["retrieve"] = (time.perf_counter() - t0) * 1000.0

    t0 = time.perf_counter()
    trials = [
        run_candidate_trial(query_features, db, cid, dist, cfg, seed) for cid, dist in ranked
    ]
    timings["match_pnp"] = (time.perf_counter() - t0) * 1000.0
    timings["total"] = sum(timings.values())

    if not ranked:
        return Unlocalized("no-candidates", timings)
    best = select_best_trial(trials)
    if best is None:
        if any(t.converged for t in trials):
            return Unlocalized("all-gated", timings)
        return Unlocalized("no-convergence", timings)

    pose = best.pnp.pose
    geo = local_to_geo(pose.position, db.frame)
    return LocalizationResult(
        pose_geo=geo,
        heading=pose.heading,
        pitch=pose.pitch,
        roll=pose.roll,
        pose_local=pose,
        inliers=best.pnp.num_inliers,
        candidate_id=best.candidate_id,
        correction=best.correction,
        timings_ms=timings,
    )
