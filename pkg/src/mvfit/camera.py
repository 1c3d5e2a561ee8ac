"""Calibrated pinhole cameras: projection, ray casting, camera-file I/O.

Conventions:
  * R is the world -> camera rotation (rows are the camera axes), o the
    camera origin in world coordinates: X_cam = R (X - o).
  * Pixel coordinates are continuous with integer sample positions, i.e.
    image[y, x] lives at pixel position (x, y); u = fx * x/z + cx.
  * E is the 4x4 projection matrix mapping homogeneous world points to
    (u z, v z, z, 1); its inverse applied to (u, v, 1, 1) lands on the
    ray through (u, v) at camera depth 1.
"""

import json
from dataclasses import dataclass

import numpy as np
import torch

from .errors import DataError
from .rotation import DTYPE, to_tensor

DEPTH_EPS = 1e-6


@dataclass
class Camera:
    name: str
    resolution: tuple        # (W, H) pixels
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray            # (3, 3) world -> camera
    o: np.ndarray            # (3,) origin in world

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=np.float64)
        self.o = np.asarray(self.o, dtype=np.float64)
        if self.fx <= 0 or self.fy <= 0:
            raise DataError("focal lengths must be positive")

    @property
    def K(self):
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def E(self):
        """4x4 projection matrix (world -> pixel-homogeneous)."""
        E = np.eye(4)
        E[:3, :3] = self.K @ self.R
        E[:3, 3] = -self.K @ self.R @ self.o
        return E

    def to_dict(self):
        return {
            "name": self.name,
            "resolution": list(self.resolution),
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "R": self.R.tolist(),
            "o": self.o.tolist(),
            "E": self.E.tolist(),
        }


def project(camera, X):
    """Project world points (..., 3) to pixels (..., 2); torch-differentiable.

    Raises NumericalError-free: callers needing the behind-camera policy
    use ``project_with_depth`` and mask on depth themselves.
    """
    p, z = project_with_depth(camera, X)
    if bool((z.detach() <= DEPTH_EPS).any()):
        raise ValueError("point behind camera")
    return p


def project_with_depth(camera, X):
    """Pixels (..., 2) and camera depths (...,); no behind-camera check."""
    X = to_tensor(X)
    Rc = to_tensor(camera.R)
    o = to_tensor(camera.o)
    Xc = (X - o) @ Rc.T
    z = Xc[..., 2]
    zs = torch.where(z.detach().abs() < DEPTH_EPS, torch.full_like(z, DEPTH_EPS), z)
    u = camera.fx * Xc[..., 0] / zs + camera.cx
    v = camera.fy * Xc[..., 1] / zs + camera.cy
    return torch.stack([u, v], dim=-1), z


def project_np(camera, X):
    """Numpy projection returning (pixels (..., 2), depth (...,))."""
    X = np.asarray(X, dtype=np.float64)
    Xc = (X - camera.o) @ camera.R.T
    z = Xc[..., 2]
    zs = np.where(np.abs(z) < DEPTH_EPS, DEPTH_EPS, z)
    u = camera.fx * Xc[..., 0] / zs + camera.cx
    v = camera.fy * Xc[..., 1] / zs + camera.cy
    return np.stack([u, v], axis=-1), z


def look_at(origin, target, up=(0.0, 1.0, 0.0)):
    """World -> camera rotation for a camera at ``origin`` looking at ``target``.

    Right-handed, x right, y down in the image, z forward.
    """
    origin = np.asarray(origin, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - origin
    z = z / np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    n = np.linalg.norm(x)
    if n < 1e-12:
        raise DataError("camera looking along the up axis")
    x = x / n
    y = np.cross(z, x)
    return np.stack([x, y, z])


def ring_cameras(count, radius, target, image_size=192, focal=None,
                 height_jitter=0.0, rng=None, phase=0.0):
    """Cameras on a horizontal ring around ``target``, all looking at it."""
    if rng is None:
        rng = np.random.default_rng(0)
    target = np.asarray(target, dtype=np.float64)
    if focal is None:
        focal = 1.25 * image_size
    cams = []
    for c in range(count):
        ang = phase + 2.0 * np.pi * c / count
        dh = rng.uniform(-height_jitter, height_jitter) if height_jitter else 0.0
        origin = target + np.array(
            [radius * np.cos(ang), dh, radius * np.sin(ang)]
        )
        cams.append(
            Camera(
                name=f"cam{c:02d}",
                resolution=(image_size, image_size),
                fx=focal,
                fy=focal,
                cx=(image_size - 1) / 2.0,
                cy=(image_size - 1) / 2.0,
                R=look_at(origin, target),
                o=origin,
            )
        )
    return cams


def save_cameras(path, cameras):
    with open(path, "w") as fh:
        json.dump({"cameras": [c.to_dict() for c in cameras]}, fh, sort_keys=True)


def load_cameras(path):
    with open(path) as fh:
        data = json.load(fh)
    cams = []
    for d in data["cameras"]:
        cam = Camera(
            name=d["name"],
            resolution=tuple(d["resolution"]),
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            R=np.asarray(d["R"]),
            o=np.asarray(d["o"]),
        )
        if "E" in d:
            _check_consistent(cam, np.asarray(d["E"]))
        cams.append(cam)
    return cams


def _check_consistent(camera, E, n_samples=8):
    """Round-trip invariant: stored E agrees with (R, o, intrinsics)."""
    rng = np.random.default_rng(1234)
    X = camera.o + camera.R.T @ np.array([0.0, 0.0, 2.0]) + rng.normal(0, 0.3, (n_samples, 3))
    Xh = np.concatenate([X, np.ones((n_samples, 1))], axis=1)
    proj = (E @ Xh.T).T
    z = proj[:, 2]
    uv_e = proj[:, :2] / z[:, None]
    uv, depth = project_np(camera, X)
    keep = depth > DEPTH_EPS
    if not np.allclose(uv_e[keep], uv[keep], atol=1e-6):
        raise DataError(f"camera {camera.name}: E inconsistent with R/o/intrinsics")
