"""Camera model and 6-DOF pose conventions.

Frames
------
World: x east, y north, z up (meters, local frame).
Camera: x right, y down, z forward along the optical axis.

A pose's orientation is given as heading/pitch/roll, applied in that order:
heading is radians clockwise from north (about world up), pitch is radians
tilting the optical axis below the horizon (about the camera's right axis),
roll is radians about the optical axis. heading=pitch=roll=0 looks at the
horizon due north with the image x axis pointing east.
"""

import math
from dataclasses import dataclass

import numpy as np

from .geodesy import LocalPoint


@dataclass(frozen=True)
class CameraModel:
    """Pinhole intrinsics in pixels plus two radial distortion coefficients."""

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width) or not (0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def hfov(self) -> float:
        """Horizontal field of view in radians (from fx and width)."""
        return 2.0 * math.atan((self.width / 2.0) / self.fx)

    @property
    def vfov(self) -> float:
        """Vertical field of view in radians (from fy and height)."""
        return 2.0 * math.atan((self.height / 2.0) / self.fy)

    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def camera_from_fov(width: int, height: int, hfov: float) -> CameraModel:
    """Ideal (distortion-free) camera from image size and horizontal FOV.

    fx = fy = (width/2) / tan(hfov/2), principal point at the image center.
    """
    if not (0.0 < hfov < math.pi):
        raise ValueError("hfov must be in (0, pi)")
    f = (width / 2.0) / math.tan(hfov / 2.0)
    return CameraModel(width=width, height=height, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0)


@dataclass(frozen=True)
class PoseSE3:
    """Camera position in the local frame plus heading/pitch/roll orientation."""

    position: LocalPoint
    heading: float
    pitch: float
    roll: float = 0.0

    def __post_init__(self):
        for a in (self.heading, self.pitch, self.roll):
            if not math.isfinite(a):
                raise ValueError("orientation angles must be finite")

    def rotation_c2w(self) -> np.ndarray:
        """Camera-to-world rotation: columns are camera axes in world coords."""
        return rotation_c2w(self.heading, self.pitch, self.roll)

    def position_array(self) -> np.ndarray:
        p = self.position
        return np.array([p.x, p.y, p.z])


def rotation_c2w(heading: float, pitch: float, roll: float) -> np.ndarray:
    """Camera-to-world rotation matrix for heading/pitch/roll (see module docs)."""
    sh, ch = math.sin(heading), math.cos(heading)
    sp, cp = math.sin(pitch), math.cos(pitch)
    # Forward axis after heading (clockwise from north) and downward pitch.
    fwd = np.array([sh * cp, ch * cp, -sp])
    # Right axis stays horizontal under heading+pitch; roll spins right/down
    # about the forward axis.
    right0 = np.array([ch, -sh, 0.0])
    down0 = np.cross(fwd, right0)
    sr, cr = math.sin(roll), math.cos(roll)
    right = cr * right0 + sr * down0
    down = -sr * right0 + cr * down0
    return np.column_stack([right, down, fwd])


def euler_from_rotation(r_c2w: np.ndarray) -> tuple[float, float, float]:
    """Recover (heading, pitch, roll) from a camera-to-world rotation.

    Inverse of :func:`rotation_c2w`. At the pitch = +-90 deg singularity the
    heading/roll split is ambiguous; roll is reported as 0 and the whole spin
    folded into heading.
    """
    fwd = r_c2w[:, 2]
    pitch = math.asin(max(-1.0, min(1.0, -fwd[2])))
    if abs(fwd[2]) > 1.0 - 1e-12:
        # Optical axis vertical: recover heading from the right axis.
        right = r_c2w[:, 0]
        heading = math.atan2(-right[1], right[0])
        return heading % (2.0 * math.pi), pitch, 0.0
    heading = math.atan2(fwd[0], fwd[1])
    right0 = np.array([math.cos(heading), -math.sin(heading), 0.0])
    down0 = np.cross(fwd, right0)
    right = r_c2w[:, 0]
    roll = math.atan2(float(right @ down0), float(right @ right0))
    return heading % (2.0 * math.pi), pitch, roll


def pose_from_rotation(r_c2w: np.ndarray, position: np.ndarray) -> PoseSE3:
    """Build a PoseSE3 from a camera-to-world rotation and world position."""
    heading, pitch, roll = euler_from_rotation(r_c2w)
    p = np.asarray(position, dtype=float)
    return PoseSE3(LocalPoint(float(p[0]), float(p[1]), float(p[2])), heading, pitch, roll)


def project_points(points_world: np.ndarray, pose: PoseSE3, cam: CameraModel) -> tuple[np.ndarray, np.ndarray]:
    """Project Nx3 world points through an ideal pinhole camera.

    Returns (Nx2 pixel coordinates, N camera-frame depths). Points behind the
    camera get nonpositive depth; their pixels are still computed and it is
    the caller's job to mask on depth.
    """
    r = pose.rotation_c2w()
    c = pose.position_array()
    p_cam = (np.asarray(points_world, dtype=float) - c) @ r  # == R^T (X - C)
    z = p_cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * p_cam[:, 0] / z + cam.cx
        v = cam.fy * p_cam[:, 1] / z + cam.cy
    return np.column_stack([u, v]), z


def backproject_pixels(pixels: np.ndarray, depths: np.ndarray, pose: PoseSE3, cam: CameraModel) -> np.ndarray:
    """Lift Nx2 pixels with camera-frame Z-depths back to Nx3 world points."""
    px = np.asarray(pixels, dtype=float)
    z = np.asarray(depths, dtype=float)
    x_n = (px[:, 0] - cam.cx) / cam.fx
    y_n = (px[:, 1] - cam.cy) / cam.fy
    p_cam = np.column_stack([x_n * z, y_n * z, z])
    r = pose.rotation_c2w()
    return p_cam @ r.T + pose.position_array()


def bearing_vectors(pixels: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Unit camera-frame ray directions through Nx2 pixels (ideal pinhole)."""
    px = np.asarray(pixels, dtype=float)
    x_n = (px[:, 0] - cam.cx) / cam.fx
    y_n = (px[:, 1] - cam.cy) / cam.fy
    d = np.column_stack([x_n, y_n, np.ones(len(px))])
    return d / np.linalg.norm(d, axis=1, keepdims=True)
