"""Synthetic terrain stage and camera renderer.

The terrain is a seeded heightfield with a color texture: a smooth large-
scale relief, farmland-like tonal fields, and scattered high-contrast
landmark patches (checkerboards, bullseyes, bar crosses) that give corner
detectors something stable to lock onto. The renderer casts one ray per
pixel through an ideal pinhole model, intersects the bilinearly
interpolated heightfield by fixed-step marching with bisection refinement,
and shades with the texture color alone so a ground point looks the same
from every viewpoint.

Pixel (u, v) samples the ray through continuous image coordinates exactly
(u, v); projecting a 3-D point with the same camera lands on those
coordinates, so keypoints, depths and reprojections share one convention.
"""

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import images
from ._raycast import raycast_kernel
from .geodesy import LocalPoint
from .geometry import CameraModel, PoseSE3

TERRAIN_MAGIC = b"SLTR"
TERRAIN_VERSION = 1

SKY_COLOR = (136, 190, 234)


class RenderError(ValueError):
    """Raised when a view cannot be rendered (e.g. camera below terrain)."""


@dataclass
class Terrain:
    """Heightfield plus aligned color texture in the local frame."""

    heightmap: np.ndarray  # (ny, nx) float32, meters
    texture: np.ndarray  # (th, tw, 3) uint8, covers the same extent
    cell_size: float
    origin_offset: LocalPoint

    _hmin: float = field(init=False, repr=False)
    _hmax: float = field(init=False, repr=False)

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.heightmap.ndim != 2 or min(self.heightmap.shape) < 2:
            raise ValueError("heightmap must be a 2-D grid with at least 2x2 nodes")
        if not np.all(np.isfinite(self.heightmap)):
            raise ValueError("heightmap contains non-finite values")
        self.heightmap = np.ascontiguousarray(self.heightmap, dtype=np.float32)
        self.texture = np.ascontiguousarray(self.texture, dtype=np.uint8)
        self._hmin = float(self.heightmap.min())
        self._hmax = float(self.heightmap.max())

    @property
    def extent(self) -> tuple[float, float]:
        """Covered size in meters (x, y)."""
        ny, nx = self.heightmap.shape
        return (nx - 1) * self.cell_size, (ny - 1) * self.cell_size

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) of the covered area in the local frame."""
        ex, ey = self.extent
        o = self.origin_offset
        return o.x, o.y, o.x + ex, o.y + ey

    @property
    def height_range(self) -> tuple[float, float]:
        return self._hmin, self._hmax


@dataclass(frozen=True)
class RenderedView:
    """Color image, Z-depth map and the pose/camera that produced them."""

    color: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float32 meters, 0 where no terrain was hit
    pose: PoseSE3
    camera: CameraModel

    def sky_fraction(self) -> float:
        return float(np.mean(self.depth == 0.0))


def generate_terrain(
    seed: int,
    extent: tuple[float, float],
    cell_size: float,
    *,
    origin: LocalPoint | None = None,
    height_amplitude: float = 12.0,
    texture_px_per_m: float = 2.0,
    landmark_density: float = 1.0 / 150.0,
) -> Terrain:
    """Deterministically synthesize a terrain for a given seed.

    ``extent`` is the covered (x, y) size in meters; the grid gets
    ``extent/cell_size + 1`` nodes per axis. The terrain is centered on the
    frame origin unless ``origin`` names the lower-left corner explicitly.
    Height variation stays within ``height_amplitude`` (<= 30 m).
    """
    ex, ey = float(extent[0]), float(extent[1])
    if ex <= 0 or ey <= 0 or cell_size <= 0:
        raise ValueError("extent and cell_size must be positive")
    if ex < cell_size or ey < cell_size:
        raise ValueError("extent smaller than one cell")
    if height_amplitude > 30.0:
        raise ValueError("height_amplitude must stay within 30 m")

    nx = int(math.floor(ex / cell_size + 1e-9)) + 1
    ny = int(math.floor(ey / cell_size + 1e-9)) + 1
    ex, ey = (nx - 1) * cell_size, (ny - 1) * cell_size
    if origin is None:
        origin = LocalPoint(-ex / 2.0, -ey / 2.0, 0.0)

    rng = np.random.default_rng(seed)

    # Relief: a handful of long-wavelength cosine waves, rescaled so the
    # total variation equals height_amplitude with the minimum at z=0.
    xs = origin.x + np.arange(nx) * cell_size
    ys = origin.y + np.arange(ny) * cell_size
    gx, gy = np.meshgrid(xs, ys)
    h = np.zeros((ny, nx))
    for _ in range(6):
        wavelength = rng.uniform(0.3, 1.0) * min(ex, ey)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        k = 2.0 * np.pi / wavelength
        h += rng.uniform(0.3, 1.0) * np.cos(k * (gx * np.cos(theta) + gy * np.sin(theta)) + phase)
    span = h.max() - h.min()
    if span > 0:
        h = (h - h.min()) * (height_amplitude / span)
    heightmap = h.astype(np.float32)

    tw = max(2, int(round(ex * texture_px_per_m)))
    th = max(2, int(round(ey * texture_px_per_m)))
    texture = _paint_texture(rng, tw, th, ex, ey, landmark_density)

    return Terrain(heightmap=heightmap, texture=texture, cell_size=cell_size, origin_offset=origin)


def _paint_texture(rng, tw, th, ex, ey, landmark_density):
    px, py = np.meshgrid(np.arange(tw), np.arange(th))
    mx = ex / tw  # meters per texture pixel
    my = ey / th

    # Base: two earth tones mixed by a slow wave, like vegetation cover.
    base_a = np.array([96.0, 124.0, 68.0])
    base_b = np.array([134.0, 114.0, 82.0])
    wx = rng.uniform(0.002, 0.006)
    wy = rng.uniform(0.002, 0.006)
    mix = 0.5 + 0.5 * np.sin(px * mx * wx * 2 * np.pi + rng.uniform(0, 2 * np.pi)) * np.sin(
        py * my * wy * 2 * np.pi + rng.uniform(0, 2 * np.pi)
    )
    tex = base_a[None, None, :] * (1 - mix[:, :, None]) + base_b[None, None, :] * mix[:, :, None]

    # Field blocks: large rectangles of shifted tone, one per ~50x50 m.
    n_fields = max(1, int(ex * ey / 2500.0))
    for _ in range(n_fields):
        fx0 = rng.integers(0, tw)
        fy0 = rng.integers(0, th)
        fw = int(rng.uniform(20, 80) / mx)
        fh = int(rng.uniform(20, 80) / my)
        tint = rng.uniform(-28, 28, size=3)
        tex[fy0 : fy0 + fh, fx0 : fx0 + fw] += tint[None, None, :]

    # Landmarks: small high-contrast patches with strong, stable corners.
    n_land = max(1, int(ex * ey * landmark_density))
    palette = np.array(
        [[235, 235, 235], [25, 25, 25], [200, 60, 40], [40, 70, 180], [220, 200, 40]],
        dtype=float,
    )
    for _ in range(n_land):
        size_m = rng.uniform(3.0, 9.0)
        half_px = max(2, int(size_m / (2 * mx)))
        cx_l = rng.integers(half_px, max(half_px + 1, tw - half_px))
        cy_l = rng.integers(half_px, max(half_px + 1, th - half_px))
        ci, cj = rng.choice(len(palette), size=2, replace=False)
        col_a, col_b = palette[ci], palette[cj]
        kind = rng.integers(0, 3)
        y0, y1 = cy_l - half_px, cy_l + half_px
        x0, x1 = cx_l - half_px, cx_l + half_px
        patch = tex[y0:y1, x0:x1]
        hpy, hpx = patch.shape[:2]
        if hpy < 4 or hpx < 4:
            continue
        yy, xx = np.meshgrid(np.arange(hpy), np.arange(hpx), indexing="ij")
        if kind == 0:  # checkerboard, 2-4 blocks per side
            blocks = rng.integers(2, 5)
            mask = ((xx * blocks // hpx) + (yy * blocks // hpy)) % 2 == 0
        elif kind == 1:  # bullseye rings
            r = np.sqrt((xx - hpx / 2) ** 2 + (yy - hpy / 2) ** 2)
            rings = rng.integers(2, 4)
            mask = (r * 2 * rings / hpx).astype(int) % 2 == 0
            mask &= r <= hpx / 2
            outside = r > hpx / 2
        else:  # bar cross
            mask = (np.abs(xx - hpx / 2) < hpx / 6) | (np.abs(yy - hpy / 2) < hpy / 6)
        painted = np.where(mask[:, :, None], col_a[None, None, :], col_b[None, None, :])
        if kind == 1:
            painted[outside] = patch[outside]
        tex[y0:y1, x0:x1] = painted

    return np.clip(np.rint(tex), 0, 255).astype(np.uint8)


def sample_height(t: Terrain, x: float, y: float) -> float:
    """Bilinear height at a local-frame (x, y); raises outside the extent."""
    x0, y0, x1, y1 = t.bounds
    if not (x0 <= x <= x1 and y0 <= y <= y1):
        raise ValueError(f"point ({x}, {y}) outside terrain extent {t.bounds}")
    gx = (x - x0) / t.cell_size
    gy = (y - y0) / t.cell_size
    ny, nx = t.heightmap.shape
    i0 = min(int(gx), nx - 2)
    j0 = min(int(gy), ny - 2)
    tx = gx - i0
    ty = gy - j0
    hm = t.heightmap
    return float(
        (hm[j0, i0] * (1 - tx) + hm[j0, i0 + 1] * tx) * (1 - ty)
        + (hm[j0 + 1, i0] * (1 - tx) + hm[j0 + 1, i0 + 1] * tx) * ty
    )


def render(t: Terrain, pose: PoseSE3, cam: CameraModel, max_range: float = 3000.0) -> RenderedView:
    """Render a color image and Z-depth map of the terrain from a pose.

    Depth is the camera-frame Z coordinate of the hit (not ray length);
    pixels that never hit terrain within ``max_range`` get depth 0 and the
    constant sky color. March step is cell_size/2 with 16 bisection
    refinements at the first crossing.
    """
    pos = pose.position_array()
    x0, y0, x1, y1 = t.bounds
    if x0 <= pos[0] <= x1 and y0 <= pos[1] <= y1:
        if pos[2] <= sample_height(t, pos[0], pos[1]):
            raise RenderError("camera is at or below the terrain surface")

    color = np.empty((cam.height, cam.width, 3), dtype=np.uint8)
    depth = np.empty((cam.height, cam.width), dtype=np.float32)
    ex, ey = t.extent
    tex_sx = t.texture.shape[1] / ex
    tex_sy = t.texture.shape[0] / ey
    raycast_kernel(
        t.heightmap,
        float(t.cell_size),
        float(x0),
        float(y0),
        t._hmin,
        t._hmax,
        t.texture,
        tex_sx,
        tex_sy,
        cam.fx,
        cam.fy,
        cam.cx,
        cam.cy,
        pose.rotation_c2w(),
        pos,
        float(t.cell_size) / 2.0,
        float(max_range),
        np.array(SKY_COLOR, dtype=np.uint8),
        color,
        depth,
    )
    return RenderedView(color=color, depth=depth, pose=pose, camera=cam)


def save_terrain(t: Terrain, path_prefix: str) -> tuple[str, str]:
    """Persist a terrain as <prefix>.sltr (heights) and <prefix>.ppm (texture)."""
    heights_path = str(path_prefix) + ".sltr"
    texture_path = str(path_prefix) + ".ppm"
    ny, nx = t.heightmap.shape
    o = t.origin_offset
    with open(heights_path, "wb") as fh:
        fh.write(TERRAIN_MAGIC)
        fh.write(struct.pack("<III", TERRAIN_VERSION, nx, ny))
        fh.write(struct.pack("<dddd", t.cell_size, o.x, o.y, o.z))
        fh.write(t.heightmap.astype("<f4").tobytes())
    images.write_ppm(texture_path, t.texture)
    return heights_path, texture_path


def load_terrain(path_prefix: str) -> Terrain:
    """Load a terrain saved by :func:`save_terrain`.

    Accepts the prefix or the .sltr path itself.
    """
    prefix = str(path_prefix)
    if prefix.endswith(".sltr"):
        prefix = prefix[: -len(".sltr")]
    heights_path = prefix + ".sltr"
    texture_path = prefix + ".ppm"
    with open(heights_path, "rb") as fh:
        if fh.read(4) != TERRAIN_MAGIC:
            raise ValueError(f"{heights_path}: not a terrain heights file")
        version, nx, ny = struct.unpack("<III", fh.read(12))
        if version != TERRAIN_VERSION:
            raise ValueError(f"{heights_path}: unsupported version {version}")
        cell, ox, oy, oz = struct.unpack("<dddd", fh.read(32))
        data = fh.read(nx * ny * 4)
    if len(data) != nx * ny * 4:
        raise ValueError(f"{heights_path}: truncated height payload")
    heightmap = np.frombuffer(data, dtype="<f4").reshape(ny, nx)
    texture = images.read_ppm(texture_path)
    return Terrain(
        heightmap=heightmap.copy(),
        texture=texture,
        cell_size=cell,
        origin_offset=LocalPoint(ox, oy, oz),
    )
