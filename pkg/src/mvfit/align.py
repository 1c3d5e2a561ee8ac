"""Global alignment: closed-form world translation from multi-view rays.

Given world-oriented landmarks Q_m (root at the origin) and confidence-
weighted rays from every camera through the corresponding 2D detections,
the translation t minimizing

    sum_{c,m} sigma_{c,m} || (Q_m + t - o_c) x d_{c,m} ||^2

has the closed form t = W^{-1} sum sigma [D (Q - o) + o - Q] with
D = d d^T and W = sum sigma (I - D). Confidences weight both the normal
matrix and the right-hand side so t is the exact minimizer (toggle
``sigma_weighted_w`` to drop them from W for comparison runs).

The solve is linear in Q, hence differentiable; gradients flow through it.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import DataError, DegenerateRaysError
from .rotation import DTYPE, to_tensor

COND_LIMIT = 1e8


@dataclass
class RayBundle:
    """Per (camera, landmark): origin, unit direction, confidence in [0, 1]."""

    origins: np.ndarray      # (C, M, 3)
    directions: np.ndarray   # (C, M, 3) unit where sigma > 0
    sigma: np.ndarray        # (C, M), zero entries drop out of all sums

    def __post_init__(self):
        self.origins = np.asarray(self.origins, dtype=np.float64)
        self.directions = np.asarray(self.directions, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        active = self.sigma > 0
        norms = np.linalg.norm(self.directions[active], axis=-1)
        if active.any() and np.any(np.abs(norms - 1.0) > 1e-9):
            raise DataError("ray directions must be unit length")


def ray_direction(camera, p):
    """Unit world direction from the camera origin through pixel p.

    Implements (E^-1 (p, 1, 1)^T)_xyz - o, normalized.
    """
    p = np.asarray(p, dtype=np.float64)
    E = camera.E
    try:
        Einv = np.linalg.inv(E)
    except np.linalg.LinAlgError as exc:
        raise DataError("singular projection matrix") from exc
    ph = np.array([p[0], p[1], 1.0, 1.0])
    X = (Einv @ ph)[:3]
    d = X - camera.o
    n = np.linalg.norm(d)
    if n < 1e-15:
        raise DataError("degenerate pixel ray")
    return d / n


def rays_from_detections(cameras, keypoints, sigma):
    """RayBundle for detections (C, M, 2) with confidences (C, M)."""
    C, M = sigma.shape
    origins = np.zeros((C, M, 3))
    dirs = np.zeros((C, M, 3))
    for c, cam in enumerate(cameras):
        origins[c, :] = cam.o
        for m in range(M):
            if sigma[c, m] > 0:
                dirs[c, m] = ray_direction(cam, keypoints[c, m])
    return RayBundle(origins=origins, directions=dirs, sigma=np.asarray(sigma, dtype=np.float64))


def _weight_matrix(rays, sigma_weighted_w=True):
    d = rays.directions
    s = rays.sigma if sigma_weighted_w else (rays.sigma > 0).astype(np.float64)
    D = np.einsum("cmi,cmj->cmij", d, d)
    return np.einsum("cm,cmij->ij", s, np.eye(3) - D)


def solve_translation(landmarks_rotated, rays, sigma_weighted_w=True):
    """Closed-form minimizer t of the ray alignment objective; torch (3,).

    ``landmarks_rotated`` are the world-oriented landmarks Q (M, 3),
    already rotated by the input camera's inverse rotation.
    """
    Q = to_tensor(landmarks_rotated)
    W = _weight_matrix(rays, sigma_weighted_w)
    svals = np.linalg.svd(W, compute_uv=False)
    if svals[-1] <= 0 or svals[0] / svals[-1] > COND_LIMIT:
        raise DegenerateRaysError(
            f"ray normal matrix ill-conditioned (cond ~ {svals[0] / max(svals[-1], 1e-300):.2e}); "
            "rays must span at least two independent directions"
        )
    d = to_tensor(rays.directions)
    o = to_tensor(rays.origins)
    s = to_tensor(rays.sigma)
    diff = Q[None, :, :] - o  # (C, M, 3)
    Dd = torch.einsum("cmi,cmj,cmj->cmi", d, d, diff)  # D (Q - o)
    rhs = torch.einsum("cm,cmi->i", s, Dd - diff)
    Wt = to_tensor(W)
    return torch.linalg.solve(Wt, rhs)


def alignment_residual(landmarks_rotated, t, rays):
    """sum sigma ||(Q + t - o) x d||^2 (the alignment objective itself)."""
    Q = to_tensor(landmarks_rotated)
    t = to_tensor(t)
    d = to_tensor(rays.directions)
    o = to_tensor(rays.origins)
    s = to_tensor(rays.sigma)
    v = Q[None, :, :] + t - o
    cross = torch.linalg.cross(v, d, dim=-1)
    return torch.einsum("cm,cm->", s, (cross**2).sum(dim=-1))
