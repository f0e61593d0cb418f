"""Quantized camera-pose enumeration for database construction.

The sizing helpers implement the advisory rules for picking grid
parameters from the camera and nominal flight height; GridSpec always
carries explicit values so a caller can follow or override the advice.
"""

import math
from dataclasses import dataclass

from .geodesy import LocalPoint
from .geometry import CameraModel, PoseSE3

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class GridSpec:
    """Pose grid: area x spacing x elevations x headings x pitches.

    ``area`` is (x0, y0, x1, y1) in the local frame; positions sample the
    half-open interval [x0, x1) (and likewise y) at ``spacing_xy`` steps.
    ``headings`` is a count per revolution; pitches are radians below the
    horizon. Roll is always 0.
    """

    area: tuple[float, float, float, float]
    spacing_xy: float
    elevations: tuple[float, ...]
    headings: int
    pitches: tuple[float, ...]

    def __post_init__(self):
        if self.spacing_xy <= 0:
            raise ValueError("spacing_xy must be positive")
        if self.headings < 1:
            raise ValueError("headings must be >= 1")
        if not self.elevations or not self.pitches:
            raise ValueError("elevations and pitches must be non-empty")
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        object.__setattr__(self, "pitches", tuple(float(p) for p in self.pitches))
        object.__setattr__(self, "area", tuple(float(a) for a in self.area))

    def axis_counts(self) -> tuple[int, int]:
        """Number of x and y samples of the half-open grid."""
        x0, y0, x1, y1 = self.area
        nx = _halfopen_count(x0, x1, self.spacing_xy)
        ny = _halfopen_count(y0, y1, self.spacing_xy)
        if nx < 1 or ny < 1:
            raise ValueError("area smaller than one grid step")
        return nx, ny

    def pose_count(self) -> int:
        nx, ny = self.axis_counts()
        return nx * ny * len(self.elevations) * self.headings * len(self.pitches)


def _halfopen_count(a: float, b: float, step: float) -> int:
    """Number of samples a, a+step, ... strictly below b."""
    if b <= a:
        return 0
    return int(math.floor((b - a - 1e-9) / step)) + 1


def nadir_footprint(cam: CameraModel, elevation: float) -> tuple[float, float]:
    """Ground rectangle seen by the camera pointed straight down from ``elevation``."""
    if elevation <= 0:
        raise ValueError("elevation must be positive")
    return (
        2.0 * elevation * math.tan(cam.hfov / 2.0),
        2.0 * elevation * math.tan(cam.vfov / 2.0),
    )


def suggest_spacing(cam: CameraModel, elevation: float) -> float:
    """Grid spacing rule: a quarter of the shorter nadir-footprint side."""
    w, h = nadir_footprint(cam, elevation)
    return min(w, h) / 4.0


def suggest_heading_count(cam: CameraModel) -> int:
    """Smallest heading count keeping >= 50% horizontal-FOV overlap between neighbors."""
    return max(1, int(math.ceil(TWO_PI / (cam.hfov / 2.0) - 1e-12)))


def elevation_band(cam: CameraModel, nominal: float) -> tuple[float, float]:
    """Advisory working altitude band (+-29%) for one rendered elevation layer."""
    if nominal <= 0:
        raise ValueError("nominal elevation must be positive")
    return 0.71 * nominal, 1.29 * nominal


def enumerate_poses(g: GridSpec) -> list[PoseSE3]:
    """All grid poses in deterministic order: x fastest, then y, elevation, heading, pitch."""
    nx, ny = g.axis_counts()
    x0, y0 = g.area[0], g.area[1]
    poses = []
    for pitch in g.pitches:
        for k in range(g.headings):
            heading = TWO_PI * k / g.headings
            for elev in g.elevations:
                for iy in range(ny):
                    y = y0 + iy * g.spacing_xy
                    for ix in range(nx):
                        x = x0 + ix * g.spacing_xy
                        poses.append(
                            PoseSE3(LocalPoint(x, y, elev), heading=heading, pitch=pitch, roll=0.0)
                        )
    return poses
