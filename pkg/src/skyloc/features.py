"""Deterministic local features and VLAD-style global image descriptors.

Local side: Harris corners with sub-pixel refinement, described by
mean-removed, L2-normalized 8x8 average-pooled patches (64-dim). Global
side: VLAD aggregation of the local descriptors against a k-means
codebook, giving a fixed-length vector (default 64 clusters x 64 dims =
4096) whose L2 distance ranks whole-image similarity. Matching is mutual
nearest neighbors with a ratio test and an absolute distance cutoff.
"""

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

LOCAL_DESC_DIM = 64
DEFAULT_CODEBOOK_SIZE = 64
CODEBOOK_MAGIC = b"SLCB"
CODEBOOK_VERSION = 1

HARRIS_K = 0.04
HARRIS_REL_THRESHOLD = 0.01
NMS_RADIUS = 8.0
PATCH = 16  # described patch side in pixels
MARGIN = PATCH // 2  # keypoints closer than this to the border are dropped


@dataclass(frozen=True)
class Keypoint:
    u: float
    v: float
    score: float


@dataclass(frozen=True)
class LocalFeature:
    keypoint: Keypoint
    descriptor: np.ndarray  # (64,) float32, unit norm or all-zero


@dataclass(frozen=True)
class Match:
    index_a: int
    index_b: int
    distance: float


@dataclass(frozen=True)
class Codebook:
    """k-means centroids used for VLAD assignment."""

    centroids: np.ndarray  # (K, d) float64
    training_seed: int

    def __post_init__(self):
        c = np.ascontiguousarray(self.centroids, dtype=np.float64)
        object.__setattr__(self, "centroids", c)
        if c.shape[0] < 2:
            raise ValueError("codebook needs at least 2 centroids")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def detect_keypoints(image: np.ndarray, max_count: int = 500) -> list[Keypoint]:
    """Harris corners: Sobel gradients, 3x3 Gaussian window, k=0.04.

    Responses below 1% of the maximum are dropped, non-maximum suppression
    enforces an 8 px minimum spacing, and the strongest ``max_count``
    survive (ties broken by (v, u) raster order). Corner locations get a
    quadratic sub-pixel refinement. Deterministic; may return [].
    """
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[0] < 32 or img.shape[1] < 32:
        raise ValueError("expected a grayscale image of at least 32x32")

    sobel_x = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64)
    ix = ndimage.convolve(img, sobel_x, mode="nearest")
    iy = ndimage.convolve(img, sobel_x.T, mode="nearest")
    gauss = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])
    sxx = ndimage.convolve(ix * ix, gauss, mode="nearest")
    syy = ndimage.convolve(iy * iy, gauss, mode="nearest")
    sxy = ndimage.convolve(ix * iy, gauss, mode="nearest")
    response = sxx * syy - sxy * sxy - HARRIS_K * (sxx + syy) ** 2

    rmax = response.max()
    if rmax <= 0:
        return []
    threshold = HARRIS_REL_THRESHOLD * rmax
    # Candidates: thresholded local maxima of the response.
    local_max = response == ndimage.maximum_filter(response, size=int(2 * NMS_RADIUS) + 1)
    vs, us = np.nonzero((response > threshold) & local_max)
    if len(vs) == 0:
        return []
    scores = response[vs, us]
    order = np.lexsort((us, vs, -scores))
    vs, us, scores = vs[order], us[order], scores[order]

    # Greedy radius suppression in priority order.
    kept_u: list[int] = []
    kept_v: list[int] = []
    kept_s: list[float] = []
    ku = np.empty(len(vs))
    kv = np.empty(len(vs))
    n_kept = 0
    r2 = NMS_RADIUS * NMS_RADIUS
    for u, v, s in zip(us, vs, scores):
        if n_kept:
            d2 = (ku[:n_kept] - u) ** 2 + (kv[:n_kept] - v) ** 2
            if (d2 < r2).any():
                continue
        ku[n_kept] = u
        kv[n_kept] = v
        n_kept += 1
        kept_u.append(int(u))
        kept_v.append(int(v))
        kept_s.append(float(s))
        if n_kept >= max_count:
            break

    h, w = response.shape
    keypoints = []
    for u, v, s in zip(kept_u, kept_v, kept_s):
        du, dv = _subpixel_offset(response, u, v, w, h)
        keypoints.append(Keypoint(u=u + du, v=v + dv, score=s))
    return keypoints


def _subpixel_offset(response, u, v, w, h):
    """Quadratic 1-D fits along u and v around an integer response maximum."""
    if not (0 < u < w - 1 and 0 < v < h - 1):
        return 0.0, 0.0

    def fit(fm, f0, fp):
        denom = fm - 2.0 * f0 + fp
        if denom >= -1e-12:
            return 0.0
        off = 0.5 * (fm - fp) / denom
        return float(np.clip(off, -0.5, 0.5))

    du = fit(response[v, u - 1], response[v, u], response[v, u + 1])
    dv = fit(response[v - 1, u], response[v, u], response[v + 1, u])
    return du, dv


def describe_local(image: np.ndarray, keypoints: list[Keypoint]) -> list[LocalFeature]:
    """Patch descriptors: 16x16 bilinear sample around the keypoint,
    average-pooled to 8x8, mean-subtracted and L2-normalized.

    Keypoints without a full 8 px border margin are dropped. Constant
    patches yield the all-zero descriptor.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    kept = [kp for kp in keypoints if MARGIN <= kp.u < w - MARGIN and MARGIN <= kp.v < h - MARGIN]
    if not kept:
        return []

    offs = np.arange(PATCH) - (PATCH - 1) / 2.0  # -7.5 .. 7.5
    centers = np.array([[kp.u, kp.v] for kp in kept])
    us = np.clip(centers[:, 0:1] + offs[None, :], 0.0, w - 1.000001)  # (n, 16)
    vs = np.clip(centers[:, 1:2] + offs[None, :], 0.0, h - 1.000001)
    u0 = np.floor(us).astype(int)
    v0 = np.floor(vs).astype(int)
    fu = us - u0
    fv = vs - v0

    patches = (
        img[v0[:, :, None], u0[:, None, :]] * ((1 - fv)[:, :, None] * (1 - fu)[:, None, :])
        + img[v0[:, :, None], u0[:, None, :] + 1] * ((1 - fv)[:, :, None] * fu[:, None, :])
        + img[v0[:, :, None] + 1, u0[:, None, :]] * (fv[:, :, None] * (1 - fu)[:, None, :])
        + img[v0[:, :, None] + 1, u0[:, None, :] + 1] * (fv[:, :, None] * fu[:, None, :])
    )  # (n, 16, 16) rows=v, cols=u

    pooled = patches.reshape(len(kept), 8, 2, 8, 2).mean(axis=(2, 4)).reshape(len(kept), 64)
    pooled -= pooled.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(pooled, axis=1, keepdims=True)
    safe = norms > 1e-12
    desc = np.where(safe, pooled / np.where(safe, norms, 1.0), 0.0).astype(np.float32)
    return [LocalFeature(kp, desc[i]) for i, kp in enumerate(kept)]


def descriptor_matrix(features: list[LocalFeature]) -> np.ndarray:
    """(n, d) float64 matrix of the features' descriptors."""
    if not features:
        return np.zeros((0, LOCAL_DESC_DIM))
    return np.stack([f.descriptor for f in features]).astype(np.float64)


def build_codebook(samples: np.ndarray, k: int = DEFAULT_CODEBOOK_SIZE, seed: int = 0) -> Codebook:
    """Lloyd's k-means with seeded k-means++ init.

    Runs exactly 50 iterations or stops early when no assignment changes.
    Empty clusters keep their previous centroid. Deterministic for a fixed
    seed.
    """
    pts = np.asarray(samples, dtype=np.float64)
    if pts.ndim != 2:
        raise ValueError("samples must be a 2-D array of descriptors")
    n = pts.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(pts, k, rng)
    assign = np.full(n, -1)
    for _ in range(50):
        d2 = _sq_distances(pts, centroids)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = pts[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
    return Codebook(centroids=centroids, training_seed=seed)


def _kmeanspp_init(pts, k, rng):
    n = pts.shape[0]
    centroids = np.empty((k, pts.shape[1]))
    idx = int(rng.integers(n))
    centroids[0] = pts[idx]
    d2 = np.sum((pts - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))  # all points coincide with a centroid
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = pts[idx]
        d2 = np.minimum(d2, np.sum((pts - centroids[j]) ** 2, axis=1))
    return centroids


def _sq_distances(a, b):
    """(n, m) squared L2 distances between row sets."""
    return np.maximum(
        np.sum(a * a, axis=1)[:, None] - 2.0 * (a @ b.T) + np.sum(b * b, axis=1)[None, :],
        0.0,
    )


def encode_global(features: list[LocalFeature], cb: Codebook) -> np.ndarray:
    """VLAD global descriptor: per-cluster residual sums, intra-normalized,
    signed-square-rooted, then L2-normalized. Returns (K*d,) float32.

    An empty feature list (or all-zero residuals) yields the all-zero
    vector.
    """
    k, d = cb.k, cb.dim
    out = np.zeros(k * d, dtype=np.float64)
    desc = descriptor_matrix(features)
    if desc.shape[0]:
        if desc.shape[1] != d:
            raise ValueError(f"descriptor dim {desc.shape[1]} != codebook dim {d}")
        d2 = _sq_distances(desc, cb.centroids)
        assign = np.argmin(d2, axis=1)  # argmin takes the lowest index on ties
        vlad = np.zeros((k, d))
        np.add.at(vlad, assign, desc - cb.centroids[assign])
        norms = np.linalg.norm(vlad, axis=1, keepdims=True)
        nz = norms[:, 0] > 1e-12
        vlad[nz] /= norms[nz]
        out = vlad.ravel()
        out = np.sign(out) * np.sqrt(np.abs(out))
        total = np.linalg.norm(out)
        if total > 1e-12:
            out = out / total
        else:
            out = np.zeros(k * d)
    return out.astype(np.float32)


def match_local(
    a: list[LocalFeature],
    b: list[LocalFeature],
    ratio: float = 0.8,
    max_distance: float = 0.9,
) -> list[Match]:
    """Mutual nearest-neighbor matches between two feature sets.

    The Lowe ratio test (nearest/second-nearest on side a) and an absolute
    L2 cutoff prune ambiguous pairs. Output is sorted by distance
    ascending; nearest-neighbor ties go to the lower index.
    """
    da = descriptor_matrix(a)
    db = descriptor_matrix(b)
    if not len(da) or not len(db):
        return []
    d2 = _sq_distances(da, db)
    nn_ab = np.argmin(d2, axis=1)
    nn_ba = np.argmin(d2, axis=0)

    # Report and threshold on exactly computed distances; the GEMM-based
    # matrix above is only used to select neighbors.
    dist_nn = np.linalg.norm(da - db[nn_ab], axis=1)
    if d2.shape[1] >= 2:
        part = np.partition(d2, 1, axis=1)
        second = np.sqrt(part[:, 1])
    else:
        second = np.full(len(da), np.inf)

    matches = []
    for ia in range(len(da)):
        ib = nn_ab[ia]
        if nn_ba[ib] != ia:
            continue
        if dist_nn[ia] > max_distance:
            continue
        if second[ia] > 0 and dist_nn[ia] > ratio * second[ia]:
            continue
        matches.append(Match(index_a=ia, index_b=int(ib), distance=float(dist_nn[ia])))
    matches.sort(key=lambda m: (m.distance, m.index_a))
    return matches


def save_codebook(cb: Codebook, path) -> None:
    """Write centroids as magic + version/K/d header + float32 payload."""
    with open(path, "wb") as fh:
        fh.write(CODEBOOK_MAGIC)
        fh.write(struct.pack("<III", CODEBOOK_VERSION, cb.k, cb.dim))
        fh.write(cb.centroids.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as fh:
        if fh.read(4) != CODEBOOK_MAGIC:
            raise ValueError(f"{path}: not a codebook file")
        version, k, d = struct.unpack("<III", fh.read(12))
        if version != CODEBOOK_VERSION:
            raise ValueError(f"{path}: unsupported codebook version {version}")
        data = fh.read(k * d * 4)
    if len(data) != k * d * 4:
        raise ValueError(f"{path}: truncated codebook payload")
    centroids = np.frombuffer(data, dtype="<f4").reshape(k, d).astype(np.float64)
    return Codebook(centroids=centroids, training_seed=-1)
