"""Perspective-n-point pose recovery: minimal 3-point solver, RANSAC
hypothesis search, and Gauss-Newton reprojection refinement.

Poses here are world-to-camera: X_cam = R @ X_world + t. The minimal
solver reduces the three-point law-of-cosines system to a quartic via
resultant elimination and recovers up to four pose candidates; a fourth
correspondence disambiguates. All per-iteration math is batched across
RANSAC hypotheses with numpy.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geodesy import LocalPoint
from .geometry import CameraModel, PoseSE3, pose_from_rotation


@dataclass(frozen=True)
class PnPConfig:
    reproj_threshold: float = 1.0  # pixels
    iterations: int = 1000
    min_inliers: int = 12
    refine_max_steps: int = 20

    def __post_init__(self):
        if min(self.reproj_threshold, self.iterations, self.min_inliers, self.refine_max_steps) <= 0:
            raise ValueError("all PnP configuration values must be positive")


@dataclass(frozen=True)
class Correspondence2D3D:
    """A query-image pixel paired with the 3-D map point it observes."""

    pixel: tuple[float, float]
    point: LocalPoint


@dataclass(frozen=True)
class PnPResult:
    pose: PoseSE3
    inliers: np.ndarray  # indices into the input pair list
    reproj_errors: np.ndarray  # pixel errors of the inliers, same order

    @property
    def num_inliers(self) -> int:
        return len(self.inliers)


def _hat(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues exponential map of an axis-angle vector."""
    theta = float(np.linalg.norm(w))
    if theta < 1e-12:
        return np.eye(3) + _hat(w)
    k = _hat(w / theta)
    return np.eye(3) + math.sin(theta) * k + (1.0 - math.cos(theta)) * (k @ k)


def apply_se3_delta(r: np.ndarray, t: np.ndarray, delta: np.ndarray):
    """Left-perturb a world-to-camera pose by a 6-vector (omega, dt)."""
    dr = rotation_exp(delta[:3])
    return dr @ r, dr @ t + delta[3:]


def reproject(r, t, points, cam: CameraModel):
    """Pixels and camera-frame depths of world points under (r, t)."""
    p_cam = points @ r.T + t
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[:, 0] / z + cam.cx
        v = cam.fy * p_cam[:, 1] / z + cam.cy
    return np.column_stack([u, v]), z


def reprojection_residuals(r, t, pixels, points, cam: CameraModel) -> np.ndarray:
    """Stacked (2n,) residual vector: projected minus observed pixels."""
    proj, _ = reproject(r, t, points, cam)
    return (proj - pixels).ravel()


def reprojection_jacobian(r, t, pixels, points, cam: CameraModel) -> np.ndarray:
    """(2n, 6) Jacobian of the residuals w.r.t. the se(3) delta of
    :func:`apply_se3_delta`, evaluated at delta = 0."""
    p_cam = points @ r.T + t
    n = len(points)
    x, y, z = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]
    inv_z = 1.0 / z
    # d(pixel)/d(p_cam)
    j_proj = np.zeros((n, 2, 3))
    j_proj[:, 0, 0] = cam.fx * inv_z
    j_proj[:, 0, 2] = -cam.fx * x * inv_z * inv_z
    j_proj[:, 1, 1] = cam.fy * inv_z
    j_proj[:, 1, 2] = -cam.fy * y * inv_z * inv_z
    # d(p_cam)/d(omega) = -[p_cam]_x ; d(p_cam)/d(dt) = I
    j_pc = np.zeros((n, 3, 6))
    j_pc[:, 0, 1] = z
    j_pc[:, 0, 2] = -y
    j_pc[:, 1, 0] = -z
    j_pc[:, 1, 2] = x
    j_pc[:, 2, 0] = y
    j_pc[:, 2, 1] = -x
    j_pc[:, :, 3:] = np.eye(3)[None, :, :]
    return np.einsum("nij,njk->nik", j_proj, j_pc).reshape(2 * n, 6)


def refine_pose(r, t, pixels, points, cam: CameraModel, max_steps: int = 20):
    """Gauss-Newton minimization of total squared reprojection error.

    Each step is halved until the error decreases (so the total error is
    monotone); stops when the step norm falls below 1e-10 or after
    ``max_steps`` steps. Returns (r, t).
    """
    pixels = np.asarray(pixels, dtype=float)
    points = np.asarray(points, dtype=float)
    res = reprojection_residuals(r, t, pixels, points, cam)
    err = float(res @ res)
    for _ in range(max_steps):
        jac = reprojection_jacobian(r, t, pixels, points, cam)
        jtj = jac.T @ jac
        jtr = jac.T @ res
        try:
            delta = np.linalg.solve(jtj + 1e-12 * np.eye(6), -jtr)
        except np.linalg.LinAlgError:
            break
        if np.linalg.norm(delta) < 1e-10:
            break
        improved = False
        for _ in range(32):
            r_new, t_new = apply_se3_delta(r, t, delta)
            res_new = reprojection_residuals(r_new, t_new, pixels, points, cam)
            err_new = float(res_new @ res_new)
            if err_new < err:
                r, t, res, err = r_new, t_new, res_new, err_new
                improved = True
                break
            delta = delta / 2.0
            if np.linalg.norm(delta) < 1e-10:
                break
        if not improved:
            break
    return r, t


def _quartic_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of batched quartics c[...,0]*v^4 + ... + c[...,4]; (m, 4) complex.

    Degenerate leading coefficients give NaN roots for that instance.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    m = c.shape[0]
    scale = np.max(np.abs(c), axis=1)
    bad = (np.abs(c[:, 0]) < 1e-12 * np.maximum(scale, 1e-300)) | (scale == 0)
    lead = np.where(bad, 1.0, c[:, 0])
    cn = c / lead[:, None]
    comp = np.zeros((m, 4, 4))
    comp[:, 1, 0] = 1.0
    comp[:, 2, 1] = 1.0
    comp[:, 3, 2] = 1.0
    comp[:, :, 3] = -cn[:, ::-1][:, :4]
    roots = np.linalg.eigvals(comp)
    # Two Newton polish steps sharpen the eigenvalue roots.
    for _ in range(2):
        p = cn[:, 0:1] * roots**4 + cn[:, 1:2] * roots**3 + cn[:, 2:3] * roots**2 + cn[:, 3:4] * roots + cn[:, 4:5]
        dp = 4 * cn[:, 0:1] * roots**3 + 3 * cn[:, 1:2] * roots**2 + 2 * cn[:, 2:3] * roots + cn[:, 3:4]
        step = np.where(np.abs(dp) > 1e-30, p / np.where(dp == 0, 1.0, dp), 0.0)
        roots = roots - step
    roots[bad] = np.nan
    return roots


def _triad_rotation(p1, p2, p3):
    """Orthonormal basis (columns) spanned by a point triple; None-mask on
    degenerate input. Batched: inputs (m, 3)."""
    e1 = p2 - p1
    n1 = np.linalg.norm(e1, axis=1, keepdims=True)
    aux = p3 - p1
    ok = n1[:, 0] > 1e-12
    e1 = e1 / np.where(n1 > 1e-12, n1, 1.0)
    e2 = aux - np.sum(aux * e1, axis=1, keepdims=True) * e1
    n2 = np.linalg.norm(e2, axis=1, keepdims=True)
    ok &= n2[:, 0] > 1e-12
    e2 = e2 / np.where(n2 > 1e-12, n2, 1.0)
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=2), ok


def p3p_batch(points: np.ndarray, bearings: np.ndarray):
    """Minimal three-point pose solver, batched.

    points: (m, 3, 3) world points; bearings: (m, 3, 3) unit camera rays.
    Returns (R (m, 4, 3, 3), t (m, 4, 3), valid (m, 4)) with up to four
    world-to-camera solutions per instance.
    """
    pw = np.asarray(points, dtype=np.float64)
    j = np.asarray(bearings, dtype=np.float64)
    m = pw.shape[0]

    a2 = np.sum((pw[:, 1] - pw[:, 2]) ** 2, axis=1)
    b2 = np.sum((pw[:, 0] - pw[:, 2]) ** 2, axis=1)
    c2 = np.sum((pw[:, 0] - pw[:, 1]) ** 2, axis=1)
    cos_a = np.sum(j[:, 1] * j[:, 2], axis=1)
    cos_b = np.sum(j[:, 0] * j[:, 2], axis=1)
    cos_c = np.sum(j[:, 0] * j[:, 1], axis=1)

    feasible = b2 > 1e-12
    b2_safe = np.where(feasible, b2, 1.0)
    big_a = a2 / b2_safe
    big_c = c2 / b2_safe

    # Monic-in-u quadratics F: u^2 + f1*u + f0, G: u^2 + g1*u + g0 where
    # f0/g0 are quadratics in v. Their resultant in u is a quartic in v.
    d2 = 1.0 - big_a + big_c
    d1 = 2.0 * cos_b * (big_a - big_c)
    d0 = -(1.0 + big_a - big_c)
    e1 = -2.0 * cos_a
    e0 = 2.0 * cos_c

    # Resultant of the two monic quadratics:
    #   (f0-g0)^2 + (f1-g1) * [ (f1-g1) g0 + e0 (f0-g0) ]
    # with f0-g0 = d2 v^2 + d1 v + d0 and f1-g1 = e1 v + e0.
    t1 = np.stack(
        [d2 * d2, 2 * d2 * d1, 2 * d2 * d0 + d1 * d1, 2 * d1 * d0, d0 * d0], axis=1
    )
    g0_2, g0_1, g0_0 = -big_c, 2.0 * big_c * cos_b, 1.0 - big_c
    # inner = (e1 v + e0) * g0 + e0 * (f0 - g0), a cubic in v
    inner = np.stack(
        [
            e1 * g0_2,
            e1 * g0_1 + e0 * g0_2 + e0 * d2,
            e1 * g0_0 + e0 * g0_1 + e0 * d1,
            e0 * g0_0 + e0 * d0,
        ],
        axis=1,
    )
    q2 = np.zeros((m, 5))
    q2[:, 0:4] += e1[:, None] * inner
    q2[:, 1:5] += e0[:, None] * inner
    quartic = t1 + q2

    roots = _quartic_roots(quartic)  # (m, 4) complex

    real_ok = np.abs(roots.imag) <= 1e-6 * (1.0 + np.abs(roots.real))
    v = roots.real
    pos_ok = v > 1e-9

    # u = -(f0 - g0) / (f1 - g1) at each root
    fg0 = d2[:, None] * v**2 + d1[:, None] * v + d0[:, None]
    fg1 = e1[:, None] * v + e0[:, None]
    denom_ok = np.abs(fg1) > 1e-12
    u = -fg0 / np.where(denom_ok, fg1, 1.0)

    s1_arg = 1.0 + v**2 - 2.0 * v * cos_b[:, None]
    s_ok = s1_arg > 1e-12
    s1 = np.sqrt(b2_safe[:, None] / np.where(s_ok, s1_arg, 1.0))
    s2 = u * s1
    s3 = v * s1
    valid = (
        real_ok
        & pos_ok
        & denom_ok
        & s_ok
        & (u > 1e-9)
        & feasible[:, None]
        & np.isfinite(v)
    )

    # Camera-frame points and rigid alignment world -> camera per candidate.
    rs = np.zeros((m, 4, 3, 3))
    ts = np.zeros((m, 4, 3))
    bw, w_ok = _triad_rotation(pw[:, 0], pw[:, 1], pw[:, 2])
    valid &= w_ok[:, None]
    for cand in range(4):
        pc1 = s1[:, cand : cand + 1] * j[:, 0]
        pc2 = s2[:, cand : cand + 1] * j[:, 1]
        pc3 = s3[:, cand : cand + 1] * j[:, 2]
        bc, c_ok = _triad_rotation(pc1, pc2, pc3)
        r = bc @ np.swapaxes(bw, 1, 2)
        t = pc1 - np.einsum("mij,mj->mi", r, pw[:, 0])
        rs[:, cand] = r
        ts[:, cand] = t
        valid[:, cand] &= c_ok
    return rs, ts, valid


def solve_pnp_ransac(
    pairs: list[Correspondence2D3D],
    cam: CameraModel,
    cfg: PnPConfig = PnPConfig(),
    seed: int = 0,
) -> PnPResult | None:
    """RANSAC + refinement over 2D-3D correspondences.

    Every iteration draws 4 pairs without replacement, solves P3P on three
    and keeps the candidate that best explains the fourth, then scores by
    inliers (reprojection error <= threshold, point in front). The best
    hypothesis (most inliers; ties by lower total inlier error) is refined
    by Gauss-Newton on its inliers and inliers are recounted. Returns None
    when no hypothesis reaches ``min_inliers``.
    """
    n = len(pairs)
    if n < 4:
        raise ValueError(f"PnP needs at least 4 correspondences, got {n}")
    pixels = np.array([p.pixel for p in pairs], dtype=np.float64)
    points = np.array([[p.point.x, p.point.y, p.point.z] for p in pairs], dtype=np.float64)

    x_n = (pixels[:, 0] - cam.cx) / cam.fx
    y_n = (pixels[:, 1] - cam.cy) / cam.fy
    rays = np.column_stack([x_n, y_n, np.ones(n)])
    rays /= np.linalg.norm(rays, axis=1, keepdims=True)

    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((cfg.iterations, n)), axis=1)[:, :4]

    rs, ts, valid = p3p_batch(points[samples[:, :3]], rays[samples[:, :3]])

    # Disambiguate the four P3P candidates on the fourth sampled pair.
    p4 = points[samples[:, 3]]  # (iters, 3)
    px4 = pixels[samples[:, 3]]
    p4_cam = np.einsum("mcij,mj->mci", rs, p4) + ts  # (iters, 4, 3)
    z4 = p4_cam[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u4 = cam.fx * p4_cam[:, :, 0] / z4 + cam.cx
        v4 = cam.fy * p4_cam[:, :, 1] / z4 + cam.cy
    err4 = np.hypot(u4 - px4[:, 0:1], v4 - px4[:, 1:2])
    err4 = np.where(valid & (z4 > 1e-9), err4, np.inf)
    best_cand = np.argmin(err4, axis=1)
    usable = np.isfinite(err4[np.arange(len(err4)), best_cand])
    if not usable.any():
        return None

    r_hyp = rs[np.arange(len(rs)), best_cand][usable]
    t_hyp = ts[np.arange(len(ts)), best_cand][usable]

    # Score every usable hypothesis on all pairs.
    p_cam = np.einsum("kij,nj->kni", r_hyp, points) + t_hyp[:, None, :]
    z = p_cam[:, :, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[:, :, 0] / z + cam.cx
        v = cam.fy * p_cam[:, :, 1] / z + cam.cy
    err = np.hypot(u - pixels[None, :, 0], v - pixels[None, :, 1])
    err = np.where(z > 1e-9, err, np.inf)
    inlier_mask = err <= cfg.reproj_threshold
    counts = inlier_mask.sum(axis=1)
    inlier_err_sum = np.where(inlier_mask, err, 0.0).sum(axis=1)
    order = np.lexsort((inlier_err_sum, -counts))
    best = order[0]
    if counts[best] < 3:
        return None

    idx = np.nonzero(inlier_mask[best])[0]
    r_ref, t_ref = refine_pose(
        r_hyp[best], t_hyp[best], pixels[idx], points[idx], cam, max_steps=cfg.refine_max_steps
    )

    proj, z_ref = reproject(r_ref, t_ref, points, cam)
    final_err = np.hypot(proj[:, 0] - pixels[:, 0], proj[:, 1] - pixels[:, 1])
    final_err = np.where(z_ref > 1e-9, final_err, np.inf)
    final_idx = np.nonzero(final_err <= cfg.reproj_threshold)[0]
    if len(final_idx) < cfg.min_inliers:
        return None

    r_c2w = r_ref.T
    center = -r_ref.T @ t_ref
    return PnPResult(
        pose=pose_from_rotation(r_c2w, center),
        inliers=final_idx,
        reproj_errors=final_err[final_idx],
    )


def pose_to_rt(pose: PoseSE3):
    """World-to-camera (R, t) of a pose (inverse of the c2w convention)."""
    r_c2w = pose.rotation_c2w()
    c = pose.position_array()
    return r_c2w.T, -r_c2w.T @ c
