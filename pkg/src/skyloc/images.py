"""Binary PPM/PGM image files and small raster utilities."""

import numpy as np


def write_ppm(path, image: np.ndarray) -> None:
    """Write an HxWx3 uint8 array as binary PPM (P6)."""
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3 or img.dtype != np.uint8:
        raise ValueError("expected HxWx3 uint8 image")
    h, w = img.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def write_pgm(path, image: np.ndarray) -> None:
    """Write an HxW uint8 array as binary PGM (P5)."""
    img = np.asarray(image)
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ValueError("expected HxW uint8 image")
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _read_netpbm_header(fh, magic: bytes):
    if fh.read(2) != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    while len(fields) < 3:
        line = fh.readline()
        if not line:
            raise ValueError("truncated netpbm header")
        body = line.split(b"#", 1)[0]
        fields.extend(int(tok) for tok in body.split())
    w, h, maxval = fields[:3]
    if maxval != 255:
        raise ValueError(f"unsupported maxval {maxval}")
    return w, h


def read_ppm(path) -> np.ndarray:
    """Read a binary PPM (P6) file into an HxWx3 uint8 array."""
    with open(path, "rb") as fh:
        w, h = _read_netpbm_header(fh, b"P6")
        data = fh.read(w * h * 3)
    if len(data) != w * h * 3:
        raise ValueError(f"truncated PPM payload in {path}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM (P5) file into an HxW uint8 array."""
    with open(path, "rb") as fh:
        w, h = _read_netpbm_header(fh, b"P5")
        data = fh.read(w * h)
    if len(data) != w * h:
        raise ValueError(f"truncated PGM payload in {path}")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w)


def to_grayscale(image: np.ndarray) -> np.ndarray:
    """Luminance (Rec. 601 weights) of an HxWx3 image as float64 HxW."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img[:, :, 0] * 0.299 + img[:, :, 1] * 0.587 + img[:, :, 2] * 0.114


def area_resample(image: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Exact area-average resample of an image to (out_w, out_h).

    Each output pixel is the mean of the source region it covers, computed
    from cumulative sums so non-integer scale factors are handled exactly.
    Works on 2-D or 3-D (channel-last) arrays; returns float64.
    """
    img = np.asarray(image, dtype=np.float64)
    squeeze = img.ndim == 2
    if squeeze:
        img = img[:, :, None]
    h, w = img.shape[:2]
    if (out_w, out_h) == (w, h):
        out = img.copy()
        return out[:, :, 0] if squeeze else out

    def axis_weights(n_src, n_out):
        # Integral of the source signal over each output cell, per axis.
        edges = np.linspace(0.0, n_src, n_out + 1)
        csum_idx = np.arange(n_src + 1, dtype=np.float64)
        return edges, csum_idx

    # Box-integrate rows then columns via linear interpolation of cumsums.
    def integrate(arr, n_out, axis):
        arr = np.moveaxis(arr, axis, 0)
        n_src = arr.shape[0]
        csum = np.zeros((n_src + 1,) + arr.shape[1:], dtype=np.float64)
        np.cumsum(arr, axis=0, out=csum[1:])
        edges, csum_idx = axis_weights(n_src, n_out)
        lo = np.clip(np.floor(edges).astype(int), 0, n_src)
        frac = edges - lo
        frac[lo == n_src] = 0.0
        at_edges = csum[lo] + frac.reshape((-1,) + (1,) * (csum.ndim - 1)) * (
            csum[np.minimum(lo + 1, n_src)] - csum[lo]
        )
        cell = (at_edges[1:] - at_edges[:-1]) / (n_src / n_out)
        return np.moveaxis(cell, 0, axis)

    out = integrate(integrate(img, out_h, 0), out_w, 1)
    return out[:, :, 0] if squeeze else out


def clamp_to_uint8(image: np.ndarray) -> np.ndarray:
    """Round and clamp a float image into uint8 range."""
    return np.clip(np.rint(image), 0, 255).astype(np.uint8)
