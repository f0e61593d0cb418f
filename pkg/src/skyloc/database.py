"""Descriptor database: build, serialize, and load.

On disk a database is a directory:

    manifest.json   written last; commits the build and carries checksums
    globals.bin     N x D float32 global descriptors, row i <-> entry i
    codebook.bin    VLAD centroids
    local/<id>.bin  per-pose keypoints + local descriptors
    depth/<id>.bin  per-pose Z-depth raster, stored at a pixel stride

Rendered color images are never persisted. Globals are loaded eagerly;
per-entry features and depth load lazily (and thread-safely) on first
access, with their checksum verified at that point.
"""

import json
import os
import struct
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import features as feat
from . import world as world_mod
from .features import Codebook, Keypoint, LocalFeature
from .geodesy import GeoPoint, LocalFrame
from .geometry import CameraModel, PoseSE3
from .posegrid import GridSpec, enumerate_poses

FORMAT_VERSION = 1
GLOBALS_MAGIC = b"SLGD"
LOCAL_MAGIC = b"SLLF"
DEPTH_MAGIC = b"SLDM"

DEFAULT_DEPTH_STRIDE = 2
SKY_WARN_FRACTION = 0.20


class DatabaseError(Exception):
    """Base for database load/validation failures."""


class CorruptFileError(DatabaseError):
    def __init__(self, filename, detail):
        self.filename = filename
        super().__init__(f"{filename}: {detail}")


class VersionMismatchError(DatabaseError):
    def __init__(self, filename, found, expected):
        self.filename = filename
        super().__init__(f"{filename}: format version {found}, expected {expected}")


@dataclass
class DatabaseEntry:
    """One rendered pose: id, pose, and lazily loaded features/depth."""

    id: int
    pose: PoseSE3
    _dir: str | None = field(default=None, repr=False)
    _expected_crc: dict | None = field(default=None, repr=False)
    _features: list[LocalFeature] | None = field(default=None, repr=False)
    _depth: np.ndarray | None = field(default=None, repr=False)
    _depth_stride: int = 1
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def local_features(self) -> list[LocalFeature]:
        if self._features is None:
            with self._lock:
                if self._features is None:
                    path = os.path.join(self._dir, "local", f"{self.id}.bin")
                    self._features = read_local_features(
                        path, expected_crc=self._crc_for(f"local/{self.id}.bin")
                    )
        return self._features

    @property
    def depth(self) -> np.ndarray:
        if self._depth is None:
            with self._lock:
                if self._depth is None:
                    path = os.path.join(self._dir, "depth", f"{self.id}.bin")
                    d, stride = read_depth(path, expected_crc=self._crc_for(f"depth/{self.id}.bin"))
                    self._depth = d
                    self._depth_stride = stride
        return self._depth

    @property
    def depth_stride(self) -> int:
        self.depth  # ensure loaded
        return self._depth_stride

    def depth_at(self, u: float, v: float) -> float:
        """Z-depth at full-resolution pixel (u, v): nearest stored sample."""
        d = self.depth
        i = int(np.clip(round(u / self._depth_stride), 0, d.shape[1] - 1))
        j = int(np.clip(round(v / self._depth_stride), 0, d.shape[0] - 1))
        return float(d[j, i])

    def _crc_for(self, rel):
        if self._expected_crc is None:
            return None
        return self._expected_crc.get(rel)


@dataclass
class DescriptorDatabase:
    globals: np.ndarray  # (N, D) float32
    entries: list[DatabaseEntry]
    camera: CameraModel
    frame: LocalFrame
    grid: GridSpec
    codebook: Codebook
    depth_stride: int = DEFAULT_DEPTH_STRIDE
    _globals64: np.ndarray | None = field(default=None, repr=False)
    _row_sq_norms: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.entries) != self.globals.shape[0] or not self.entries:
            raise ValueError("globals rows must correspond 1:1 to entries (N >= 1)")

    @property
    def size(self) -> int:
        return len(self.entries)

    @property
    def dim(self) -> int:
        return self.globals.shape[1]

    @property
    def globals64(self) -> np.ndarray:
        """Float64 view of the descriptor array, cached for fast retrieval."""
        if self._globals64 is None:
            self._globals64 = self.globals.astype(np.float64)
            self._row_sq_norms = np.einsum("ij,ij->i", self._globals64, self._globals64)
        return self._globals64

    @property
    def row_sq_norms(self) -> np.ndarray:
        self.globals64
        return self._row_sq_norms

    def size_estimate_bytes(self) -> int:
        """Disk footprint estimate: globals + feature files + depth files."""
        n, d = self.globals.shape
        feat_bytes = 0
        for e in self.entries:
            if e._features is not None:
                feat_bytes += 16 + len(e._features) * (12 + 4 * feat.LOCAL_DESC_DIM)
        sw = -(-self.camera.width // self.depth_stride)
        sh = -(-self.camera.height // self.depth_stride)
        return n * d * 4 + feat_bytes + n * (20 + sw * sh * 4)


def write_globals(path, globals_array: np.ndarray) -> None:
    g = np.ascontiguousarray(globals_array, dtype="<f4")
    n, d = g.shape
    with open(path, "wb") as fh:
        fh.write(GLOBALS_MAGIC)
        fh.write(struct.pack("<IQI", FORMAT_VERSION, n, d))
        fh.write(g.tobytes())


def read_globals(path, expected_crc=None) -> np.ndarray:
    name = os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CorruptFileError(name, "missing file") from None
    if expected_crc is not None and zlib.crc32(raw) != expected_crc:
        raise CorruptFileError(name, "checksum mismatch")
    if raw[:4] != GLOBALS_MAGIC:
        raise CorruptFileError(name, "bad magic")
    version, n, d = struct.unpack("<IQI", raw[4:20])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(name, version, FORMAT_VERSION)
    payload = raw[20:]
    if len(payload) != n * d * 4:
        raise CorruptFileError(name, f"expected {n * d * 4} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(n, d).copy()


def write_local_features(path, feats: list[LocalFeature]) -> None:
    with open(path, "wb") as fh:
        fh.write(LOCAL_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, len(feats), feat.LOCAL_DESC_DIM))
        for f in feats:
            fh.write(struct.pack("<fff", f.keypoint.u, f.keypoint.v, f.keypoint.score))
            fh.write(np.asarray(f.descriptor, dtype="<f4").tobytes())


def read_local_features(path, expected_crc=None) -> list[LocalFeature]:
    name = os.path.basename(os.path.dirname(path)) + "/" + os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CorruptFileError(name, "missing file") from None
    if expected_crc is not None and zlib.crc32(raw) != expected_crc:
        raise CorruptFileError(name, "checksum mismatch")
    if raw[:4] != LOCAL_MAGIC:
        raise CorruptFileError(name, "bad magic")
    version, count, dim = struct.unpack("<III", raw[4:16])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(name, version, FORMAT_VERSION)
    rec = 12 + dim * 4
    payload = raw[16:]
    if len(payload) != count * rec:
        raise CorruptFileError(name, f"expected {count * rec} payload bytes, found {len(payload)}")
    out = []
    for i in range(count):
        off = i * rec
        u, v, score = struct.unpack_from("<fff", payload, off)
        desc = np.frombuffer(payload, dtype="<f4", count=dim, offset=off + 12).copy()
        out.append(LocalFeature(Keypoint(u=u, v=v, score=score), desc))
    return out


def write_depth(path, depth: np.ndarray, stride: int) -> None:
    d = np.ascontiguousarray(depth, dtype="<f4")
    h, w = d.shape
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, w, h, stride))
        fh.write(d.tobytes())


def read_depth(path, expected_crc=None) -> tuple[np.ndarray, int]:
    name = os.path.basename(os.path.dirname(path)) + "/" + os.path.basename(path)
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise CorruptFileError(name, "missing file") from None
    if expected_crc is not None and zlib.crc32(raw) != expected_crc:
        raise CorruptFileError(name, "checksum mismatch")
    if raw[:4] != DEPTH_MAGIC:
        raise CorruptFileError(name, "bad magic")
    version, w, h, stride = struct.unpack("<IIII", raw[4:20])
    if version != FORMAT_VERSION:
        raise VersionMismatchError(name, version, FORMAT_VERSION)
    payload = raw[20:]
    if len(payload) != w * h * 4:
        raise CorruptFileError(name, f"expected {w * h * 4} payload bytes, found {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy(), stride


def _camera_to_json(cam: CameraModel) -> dict:
    return {
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "k1": cam.k1,
        "k2": cam.k2,
    }


def _camera_from_json(d) -> CameraModel:
    return CameraModel(**d)


def _grid_to_json(g: GridSpec) -> dict:
    return {
        "area": list(g.area),
        "spacing_xy": g.spacing_xy,
        "elevations": list(g.elevations),
        "headings": g.headings,
        "pitches_rad": list(g.pitches),
    }


def _grid_from_json(d) -> GridSpec:
    return GridSpec(
        area=tuple(d["area"]),
        spacing_xy=d["spacing_xy"],
        elevations=tuple(d["elevations"]),
        headings=d["headings"],
        pitches=tuple(d["pitches_rad"]),
    )


def build_database(
    terrain: world_mod.Terrain,
    grid: GridSpec,
    cam: CameraModel,
    frame: LocalFrame,
    codebook: Codebook,
    out_dir: str,
    *,
    depth_stride: int = DEFAULT_DEPTH_STRIDE,
    max_keypoints: int = 500,
    threads: int = 1,
    progress=None,
) -> DescriptorDatabase:
    """Render every grid pose and persist its descriptors and depth.

    Per pose: render -> detect -> describe -> encode; the global row,
    feature file and (strided) depth file are written and the color image
    discarded. The manifest is written last so partial builds are
    detectably incomplete. Output bytes are independent of ``threads``.
    """
    poses = enumerate_poses(grid)
    os.makedirs(out_dir, exist_ok=True)
    os.makedirs(os.path.join(out_dir, "local"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "depth"), exist_ok=True)

    dim = codebook.k * codebook.dim
    globals_array = np.zeros((len(poses), dim), dtype=np.float32)
    entries = []
    sky_warned = 0

    def process(idx_pose):
        idx, pose = idx_pose
        view = world_mod.render(terrain, pose, cam)
        gray = np.asarray(view.color, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])
        kps = feat.detect_keypoints(gray, max_count=max_keypoints)
        lf = feat.describe_local(gray, kps)
        g = feat.encode_global(lf, codebook)
        return idx, g, lf, view.depth[::depth_stride, ::depth_stride].copy(), view.sky_fraction()

    results = []
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for r in pool.map(process, enumerate(poses)):
                results.append(r)
                if progress:
                    progress(len(results), len(poses))
    else:
        for item in map(process, enumerate(poses)):
            results.append(item)
            if progress:
                progress(len(results), len(poses))

    checksums = {}
    for idx, g, lf, depth, skyfrac in results:
        if skyfrac > SKY_WARN_FRACTION:
            sky_warned += 1
        globals_array[idx] = g
        lpath = os.path.join(out_dir, "local", f"{idx}.bin")
        dpath = os.path.join(out_dir, "depth", f"{idx}.bin")
        write_local_features(lpath, lf)
        write_depth(dpath, depth, depth_stride)
        checksums[f"local/{idx}.bin"] = _crc_file(lpath)
        checksums[f"depth/{idx}.bin"] = _crc_file(dpath)
        entry = DatabaseEntry(id=idx, pose=poses[idx])
        entry._features = _quantize_features(lf)
        entry._depth = depth
        entry._depth_stride = depth_stride
        entries.append(entry)
    entries.sort(key=lambda e: e.id)

    gpath = os.path.join(out_dir, "globals.bin")
    write_globals(gpath, globals_array)
    checksums["globals.bin"] = _crc_file(gpath)
    cpath = os.path.join(out_dir, "codebook.bin")
    feat.save_codebook(codebook, cpath)
    checksums["codebook.bin"] = _crc_file(cpath)

    if sky_warned:
        import warnings

        warnings.warn(
            f"{sky_warned} of {len(poses)} rendered views contain more than "
            f"{SKY_WARN_FRACTION:.0%} sky pixels; consider a larger terrain margin",
            stacklevel=2,
        )

    manifest = {
        "format_version": FORMAT_VERSION,
        "n": len(poses),
        "d": dim,
        "depth_stride": depth_stride,
        "camera": _camera_to_json(cam),
        "frame_origin": {
            "lat": frame.origin.lat,
            "lon": frame.origin.lon,
            "alt": frame.origin.alt,
        },
        "earth_radius": frame.earth_radius,
        "grid": _grid_to_json(grid),
        "checksums": checksums,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)

    return DescriptorDatabase(
        globals=globals_array,
        entries=entries,
        camera=cam,
        frame=frame,
        grid=grid,
        codebook=codebook,
        depth_stride=depth_stride,
    )


def _crc_file(path) -> int:
    with open(path, "rb") as fh:
        return zlib.crc32(fh.read())


def _quantize_features(feats: list[LocalFeature]) -> list[LocalFeature]:
    """Round keypoints to the float32 precision the file format stores, so
    a freshly built database compares equal to its loaded copy."""
    return [
        LocalFeature(
            Keypoint(
                u=float(np.float32(f.keypoint.u)),
                v=float(np.float32(f.keypoint.v)),
                score=float(np.float32(f.keypoint.score)),
            ),
            np.asarray(f.descriptor, dtype=np.float32),
        )
        for f in feats
    ]


def load_database(db_dir: str) -> DescriptorDatabase:
    """Load a built database; globals eagerly, per-entry data lazily."""
    mpath = os.path.join(db_dir, "manifest.json")
    try:
        with open(mpath) as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise CorruptFileError("manifest.json", "missing file (incomplete build?)") from None
    except json.JSONDecodeError as e:
        raise CorruptFileError("manifest.json", f"invalid JSON: {e}") from None
    if manifest.get("format_version") != FORMAT_VERSION:
        raise VersionMismatchError("manifest.json", manifest.get("format_version"), FORMAT_VERSION)

    checksums = manifest.get("checksums", {})
    globals_array = read_globals(
        os.path.join(db_dir, "globals.bin"), expected_crc=checksums.get("globals.bin")
    )
    n, d = globals_array.shape
    if n != manifest["n"] or d != manifest["d"]:
        raise CorruptFileError("globals.bin", f"shape {n}x{d} disagrees with manifest")

    cb_raw = os.path.join(db_dir, "codebook.bin")
    if checksums.get("codebook.bin") is not None and _crc_file(cb_raw) != checksums["codebook.bin"]:
        raise CorruptFileError("codebook.bin", "checksum mismatch")
    codebook = feat.load_codebook(cb_raw)

    cam = _camera_from_json(manifest["camera"])
    grid = _grid_from_json(manifest["grid"])
    fo = manifest["frame_origin"]
    frame = LocalFrame(
        origin=GeoPoint(lat=fo["lat"], lon=fo["lon"], alt=fo["alt"]),
        earth_radius=manifest.get("earth_radius", 6_371_008.8),
    )
    poses = enumerate_poses(grid)
    if len(poses) != n:
        raise CorruptFileError("manifest.json", f"grid implies {len(poses)} poses, manifest has {n}")
    entries = [
        DatabaseEntry(id=i, pose=poses[i], _dir=db_dir, _expected_crc=checksums) for i in range(n)
    ]
    return DescriptorDatabase(
        globals=globals_array,
        entries=entries,
        camera=cam,
        frame=frame,
        grid=grid,
        codebook=codebook,
        depth_stride=manifest.get("depth_stride", DEFAULT_DEPTH_STRIDE),
    )
