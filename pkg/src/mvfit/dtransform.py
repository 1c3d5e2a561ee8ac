"""Exact Euclidean distance transforms of silhouette contours.

The distance image D is zero exactly on contour pixels (foreground pixels
with at least one in-image background 4-neighbor) and holds the exact
Euclidean pixel distance to the nearest contour pixel everywhere else,
inside and outside the silhouette. Computed with the two-pass separable
squared-distance algorithm (per-column 1D transform, then per-row lower
envelopes of parabolas), which is exact for integer seed grids.

Bilinear sampling supports a "frozen cell" mode: the interpolation cell of
each sample can be pinned (from the base evaluation point) so that finite
difference probes differentiate the same smooth bilinear patch the
analytic gradient sees; values and gradients at the base point itself are
unchanged by freezing.
"""

import struct
from dataclasses import dataclass

import numpy as np
import torch
from numba import njit

from .errors import DataError
from .rotation import DTYPE

_DT_MAGIC = b"MVDTIMG\x00"
_INF = 1e30


def contour_mask(mask):
    """Contour pixels: foreground with an in-image background 4-neighbor."""
    m = np.asarray(mask).astype(bool)
    c = np.zeros_like(m)
    c[1:, :] |= m[1:, :] & ~m[:-1, :]
    c[:-1, :] |= m[:-1, :] & ~m[1:, :]
    c[:, 1:] |= m[:, 1:] & ~m[:, :-1]
    c[:, :-1] |= m[:, :-1] & ~m[:, 1:]
    return c


@njit(cache=True)
def _edt_1d(f, d, v, z):
    """Felzenszwalb lower-envelope transform of one row (squared distances)."""
    n = f.shape[0]
    k = 0
    v[0] = 0
    z[0] = -_INF
    z[1] = _INF
    for q in range(1, n):
        s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        while s <= z[k]:
            k -= 1
            s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k])
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = _INF
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        d[q] = (q - v[k]) * (q - v[k]) + f[v[k]]


@njit(cache=True)
def _edt_sq(seed):
    """Exact squared EDT of a boolean seed grid (True = distance 0)."""
    h, w = seed.shape
    g = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            g[y, x] = 0.0 if seed[y, x] else _INF
    d = np.empty(w)
    v = np.empty(w + 1, dtype=np.int64)
    z = np.empty(w + 2)
    for y in range(h):
        _edt_1d(g[y], d, v, z)
        g[y] = d
    d2 = np.empty(h)
    v2 = np.empty(h + 1, dtype=np.int64)
    z2 = np.empty(h + 2)
    col = np.empty(h)
    for x in range(w):
        for y in range(h):
            col[y] = g[y, x]
        _edt_1d(col, d2, v2, z2)
        for y in range(h):
            g[y, x] = d2[y]
    return g


def distance_transform(mask):
    """SilhouetteObservation from a binary mask (exact Euclidean DT in px)."""
    m = np.asarray(mask).astype(bool)
    contour = contour_mask(m)
    if not contour.any():
        raise DataError("contour empty (mask empty or full-frame)")
    dt = np.sqrt(_edt_sq(contour))
    return SilhouetteObservation(mask=m.astype(np.uint8), dt=dt, grad=dt_gradient(dt))


def dt_gradient(dt):
    """Central-difference gradient (H, W, 2) = (d/dx, d/dy), one-sided at borders."""
    gy, gx = np.gradient(dt)
    return np.stack([gx, gy], axis=-1)


@dataclass
class SilhouetteObservation:
    mask: np.ndarray   # (H, W) uint8
    dt: np.ndarray     # (H, W) float64, zero exactly on contour pixels
    grad: np.ndarray   # (H, W, 2) central-difference gradient of dt

    def __post_init__(self):
        self._dt_t = None

    def dt_tensor(self):
        if self._dt_t is None:
            self._dt_t = torch.as_tensor(self.dt, dtype=DTYPE)
        return self._dt_t


def bilinear_cells(pts, shape):
    """Top-left interpolation node per sample, clamped inside the image."""
    h, w = shape
    p = np.asarray(pts, dtype=np.float64)
    ix = np.clip(np.floor(p[..., 0]), 0, w - 2).astype(np.int64)
    iy = np.clip(np.floor(p[..., 1]), 0, h - 2).astype(np.int64)
    return np.stack([ix, iy], axis=-1)


def sample_bilinear(img, pts, cells=None):
    """Bilinearly sample ``img`` (torch (H, W)) at pixel positions (n, 2).

    ``cells`` pins the interpolation cell per point; outside samples use the
    smooth extension of the (clamped) border cell.
    """
    img = img if isinstance(img, torch.Tensor) else torch.as_tensor(img, dtype=DTYPE)
    if not isinstance(pts, torch.Tensor):
        pts = torch.as_tensor(pts, dtype=DTYPE)
    h, w = img.shape
    if cells is None:
        cells = bilinear_cells(pts.detach().numpy(), (h, w))
    ix = torch.as_tensor(cells[..., 0], dtype=torch.int64)
    iy = torch.as_tensor(cells[..., 1], dtype=torch.int64)
    fx = pts[..., 0] - ix
    fy = pts[..., 1] - iy
    c00 = img[iy, ix]
    c10 = img[iy, ix + 1]
    c01 = img[iy + 1, ix]
    c11 = img[iy + 1, ix + 1]
    return (
        c00 * (1 - fx) * (1 - fy)
        + c10 * fx * (1 - fy)
        + c01 * (1 - fx) * fy
        + c11 * fx * fy
    )


def sample_grad(grad, pts):
    """Bilinear sample of the gradient image at numpy points (n, 2) -> (n, 2)."""
    h, w = grad.shape[:2]
    cells = bilinear_cells(pts, (h, w))
    ix, iy = cells[..., 0], cells[..., 1]
    fx = (pts[..., 0] - ix)[..., None]
    fy = (pts[..., 1] - iy)[..., None]
    return (
        grad[iy, ix] * (1 - fx) * (1 - fy)
        + grad[iy, ix + 1] * fx * (1 - fy)
        + grad[iy + 1, ix] * (1 - fx) * fy
        + grad[iy + 1, ix + 1] * fx * fy
    )


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def save_pgm(path, mask):
    """Binary mask as P5 PGM, foreground = 255."""
    m = (np.asarray(mask) > 0).astype(np.uint8) * 255
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(m.tobytes())


def load_pgm(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM")
    fields, pos = [], 2
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while data[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(int(data[start:pos]))
    w, h, maxval = fields
    raw = data[pos + 1 : pos + 1 + w * h]
    if len(raw) != w * h or maxval > 255:
        raise DataError(f"{path}: truncated or unsupported PGM")
    return (np.frombuffer(raw, dtype=np.uint8).reshape(h, w) > 0).astype(np.uint8)


def save_dt(path, dt):
    """DT raster: 16-byte header (magic, u32 W, u32 H), little-endian f32 rows."""
    arr = np.asarray(dt, dtype="<f4")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_DT_MAGIC)
        fh.write(struct.pack("<II", w, h))
        fh.write(arr.tobytes())


def load_dt(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if head[:8] != _DT_MAGIC:
            raise DataError(f"{path}: bad DT magic")
        w, h = struct.unpack("<II", head[8:])
        raw = fh.read(4 * w * h)
    if len(raw) != 4 * w * h:
        raise DataError(f"{path}: truncated DT raster")
    return np.frombuffer(raw, dtype="<f4").reshape(h, w).astype(np.float64)


def load_silhouette(mask_path, dt_path):
    mask = load_pgm(mask_path)
    dt = load_dt(dt_path)
    if dt.shape != mask.shape:
        raise DataError("mask / DT shape mismatch")
    return SilhouetteObservation(mask=mask, dt=dt, grad=dt_gradient(dt))
