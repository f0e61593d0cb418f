"""Synthetic PnP instance generation shared by unit and acceptance tests.

Instances are built backwards from a known pose: pixels are drawn
uniformly, depths assigned, and the 3-D points recovered by
back-projection, so the ground-truth pose explains every inlier exactly.
Inlier pixel noise is truncated (rejection-sampled) below the RANSAC
threshold and outliers are forced at least 3 px away from their true
projection, so the generated labels are an unambiguous oracle for
inlier-set recovery.
"""

import numpy as np

from skyloc.geodesy import LocalPoint
from skyloc.geometry import rotation_c2w
from skyloc.pnp import Correspondence2D3D

INLIER_NOISE_CAP = 0.8  # px, keeps every true inlier within a 1.0 px gate
OUTLIER_MIN_OFFSET = 3.0  # px


def random_pose(rng, cam):
    heading = rng.uniform(0.0, 2.0 * np.pi)
    pitch = rng.uniform(0.3, 1.4)
    roll = rng.uniform(-0.3, 0.3)
    r_c2w = rotation_c2w(heading, pitch, roll)
    center = rng.uniform([-100.0, -100.0, 40.0], [100.0, 100.0, 90.0])
    return r_c2w, center


def pnp_instance(rng, cam, n, noise_sigma=0.0, outlier_fraction=0.0):
    """Returns (pairs, r_c2w, center, inlier_labels)."""
    r_c2w, center = random_pose(rng, cam)
    r = r_c2w.T
    t = -r @ center

    margin = 10.0
    pix = rng.uniform(
        [margin, margin], [cam.width - margin, cam.height - margin], size=(n, 2)
    )
    z = rng.uniform(50.0, 150.0, size=n)
    x_n = (pix[:, 0] - cam.cx) / cam.fx
    y_n = (pix[:, 1] - cam.cy) / cam.fy
    p_cam = np.column_stack([x_n * z, y_n * z, z])
    p_world = (p_cam - t) @ r

    obs = pix.copy()
    if noise_sigma > 0:
        for i in range(n):
            while True:
                d = rng.normal(0.0, noise_sigma, 2)
                if np.hypot(d[0], d[1]) <= INLIER_NOISE_CAP:
                    break
            obs[i] += d

    labels = np.ones(n, dtype=bool)
    n_out = int(round(outlier_fraction * n))
    if n_out:
        which = rng.choice(n, size=n_out, replace=False)
        for i in which:
            while True:
                fake = rng.uniform([0.0, 0.0], [cam.width, cam.height])
                if np.hypot(fake[0] - pix[i, 0], fake[1] - pix[i, 1]) >= OUTLIER_MIN_OFFSET:
                    break
            obs[i] = fake
            labels[i] = False

    pairs = [
        Correspondence2D3D((obs[i, 0], obs[i, 1]), LocalPoint(*p_world[i])) for i in range(n)
    ]
    return pairs, r_c2w, center, labels


def rotation_angle(r_a, r_b) -> float:
    """Geodesic angle between two rotations, radians."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))
