"""Software triangle rasterization and silhouette-boundary extraction.

Scan conversion uses a deterministic top-left fill rule on pixel centers at
integer coordinates, with a perspective-correct z-buffer. Triangles with any
vertex at or behind the near plane are culled (no clipping); the synthetic
scenes keep the subject well in front of every camera.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import DEPTH_EPS, project_np


@njit(cache=True)
def _raster_kernel(pts, depth, faces, width, height, mask, zbuf):
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        z0, z1, z2 = depth[i0], depth[i1], depth[i2]
        if z0 <= 1e-6 or z1 <= 1e-6 or z2 <= 1e-6:
            continue
        x0, y0 = pts[i0, 0], pts[i0, 1]
        x1, y1 = pts[i1, 0], pts[i1, 1]
        x2, y2 = pts[i2, 0], pts[i2, 1]
        area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area == 0.0:
            continue
        if area < 0.0:
            x1, y1, x2, y2 = x2, y2, x1, y1
            z1, z2 = z2, z1
            area = -area
        lo_x = max(0, int(np.ceil(min(x0, min(x1, x2)))))
        hi_x = min(width - 1, int(np.floor(max(x0, max(x1, x2)))))
        lo_y = max(0, int(np.ceil(min(y0, min(y1, y2)))))
        hi_y = min(height - 1, int(np.floor(max(y0, max(y1, y2)))))
        if lo_x > hi_x or lo_y > hi_y:
            continue
        # edge vectors for the top-left rule (triangle already oriented)
        e0x, e0y = x2 - x1, y2 - y1   # edge v1 -> v2 (weight of v0)
        e1x, e1y = x0 - x2, y0 - y2   # edge v2 -> v0
        e2x, e2y = x1 - x0, y1 - y0   # edge v0 -> v1
        tl0 = e0y < 0.0 or (e0y == 0.0 and e0x > 0.0)
        tl1 = e1y < 0.0 or (e1y == 0.0 and e1x > 0.0)
        tl2 = e2y < 0.0 or (e2y == 0.0 and e2x > 0.0)
        for py in range(lo_y, hi_y + 1):
            for px in range(lo_x, hi_x + 1):
                w0 = e0x * (py - y1) - e0y * (px - x1)
                w1 = e1x * (py - y2) - e1y * (px - x2)
                w2 = e2x * (py - y0) - e2y * (px - x0)
                ok0 = w0 > 0.0 or (w0 == 0.0 and tl0)
                ok1 = w1 > 0.0 or (w1 == 0.0 and tl1)
                ok2 = w2 > 0.0 or (w2 == 0.0 and tl2)
                if ok0 and ok1 and ok2:
                    l0 = w0 / area
                    l1 = w1 / area
                    l2 = w2 / area
                    inv_z = l0 / z0 + l1 / z1 + l2 / z2
                    z = 1.0 / inv_z
                    mask[py, px] = 1
                    if z < zbuf[py, px]:
                        zbuf[py, px] = z


def render_depth(camera, V_world, faces):
    """Rasterize: (mask (H, W) uint8, zbuf (H, W) float64, +inf = empty)."""
    W, H = camera.resolution
    pts, depth = project_np(camera, V_world)
    mask = np.zeros((H, W), dtype=np.uint8)
    zbuf = np.full((H, W), np.inf)
    _raster_kernel(
        np.ascontiguousarray(pts),
        np.ascontiguousarray(depth),
        np.ascontiguousarray(faces, dtype=np.int64),
        W,
        H,
        mask,
        zbuf,
    )
    return mask, zbuf


def rasterize_mask(camera, V_world, faces):
    """Binary coverage mask of the mesh in the given camera."""
    return render_depth(camera, V_world, faces)[0]


@dataclass
class BoundarySet:
    """Visible silhouette-rim vertices with image-space outward normals."""

    indices: np.ndarray    # (B,) vertex ids
    normals2d: np.ndarray  # (B, 2) unit (or zero) image-space normals


def boundary_vertices(camera, V_world, faces, normals, edges=None, edge_faces=None,
                      depth_tol=0.01):
    """Vertices on the projected silhouette rim of the mesh.

    A contour edge either borders exactly one valid front-facing triangle
    (front/back sign change or mesh border); its endpoints are candidates,
    kept when their depth is within ``depth_tol`` of the z-buffer at their
    pixel. Facing is decided geometrically (face normal vs. view ray) so
    it is independent of the projection handedness.
    """
    from .assets import edge_face_map

    V = np.asarray(V_world, dtype=np.float64)
    F = np.asarray(faces, dtype=np.int64)
    if edges is None or edge_faces is None:
        edges, edge_faces = edge_face_map(F)
    pts, depth = project_np(camera, V)
    valid_v = depth > DEPTH_EPS
    valid_f = valid_v[F].all(axis=1)
    if not valid_f.any():
        return BoundarySet(np.empty(0, dtype=np.int64), np.empty((0, 2)))

    fn = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    view = V[F].mean(axis=1) - camera.o
    front = (fn * view).sum(axis=1) < 0.0

    f0, f1 = edge_faces[:, 0], edge_faces[:, 1]
    v0 = np.where(f0 >= 0, valid_f[np.clip(f0, 0, None)], False)
    v1 = np.where(f1 >= 0, valid_f[np.clip(f1, 0, None)], False)
    fr0 = np.where(f0 >= 0, front[np.clip(f0, 0, None)], False)
    fr1 = np.where(f1 >= 0, front[np.clip(f1, 0, None)], False)
    # front/back sign change, or a border / half-culled edge
    contour = (v0 & v1 & (fr0 != fr1)) | (v0 ^ v1)
    cand = np.unique(edges[contour].ravel())
    cand = cand[valid_v[cand]]
    if len(cand) == 0:
        return BoundarySet(np.empty(0, dtype=np.int64), np.empty((0, 2)))

    Wpix, Hpix = camera.resolution
    _, zbuf = render_depth(camera, V, F)
    px = np.round(pts[cand, 0]).astype(np.int64)
    py = np.round(pts[cand, 1]).astype(np.int64)
    inside = (px >= 0) & (px < Wpix) & (py >= 0) & (py < Hpix)
    cand, px, py = cand[inside], px[inside], py[inside]
    zb = zbuf[py, px]
    visible = np.isinf(zb) | (depth[cand] <= zb * (1.0 + depth_tol))
    cand = cand[visible]
    if len(cand) == 0:
        return BoundarySet(np.empty(0, dtype=np.int64), np.empty((0, 2)))

    # image-space outward normals: projection Jacobian applied to the 3D normal
    n_cam = np.asarray(normals)[cand] @ camera.R.T
    Xc = (V[cand] - camera.o) @ camera.R.T
    z = Xc[:, 2]
    du = camera.fx * (n_cam[:, 0] / z - Xc[:, 0] * n_cam[:, 2] / z**2)
    dv = camera.fy * (n_cam[:, 1] / z - Xc[:, 1] * n_cam[:, 2] / z**2)
    n2 = np.stack([du, dv], axis=1)
    norms = np.linalg.norm(n2, axis=1)
    good = norms > 1e-12
    n2[good] /= norms[good, None]
    n2[~good] = 0.0
    return BoundarySet(indices=cand, normals2d=n2)
