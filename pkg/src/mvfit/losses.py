"""Weak-supervision energies and the two stage objectives.

Pose stage:   w_kp * keypoint + w_limit * joint-limit prior
Deform stage: w_sil * silhouette + w_kpg * graph keypoint + w_arap * ARAP

Discrete sets (behind-camera masks, boundary vertex sets B_c, the
directional gates rho, and bilinear DT cells) are recomputed every
iteration but frozen within one gradient evaluation, which makes each
evaluation a smooth function of the parameters; ``freeze_*`` helpers
produce that state from the current iterate.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import torch

from . import graphdeform, kinematics
from .align import RayBundle, solve_translation
from .camera import DEPTH_EPS, project_with_depth
from .dtransform import bilinear_cells, sample_bilinear, sample_grad
from .raster import boundary_vertices
from .rotation import DTYPE, euler_to_matrix, to_tensor

ARAP_EPS = 1e-6
CONFIDENCE_FLOOR = 0.4


def clamp_confidence(sigma):
    """Zero out detections below the confidence floor (in place semantics)."""
    s = np.asarray(sigma, dtype=np.float64).copy()
    s[s < CONFIDENCE_FLOOR] = 0.0
    return s


def hierarchical_lambda(depths, fraction, far_weight=0.1):
    """Chain-depth keypoint weights: the active frontier grows root-outward.

    Landmarks whose chain depth is within 1 + ceil(fraction * max_depth)
    get weight 1, the rest ``far_weight``.
    """
    depths = np.asarray(depths)
    max_depth = int(depths.max()) if len(depths) else 0
    cut = 1 + int(np.ceil(float(fraction) * max_depth))
    return np.where(depths <= cut, 1.0, far_weight)


@dataclass
class LossWeights:
    w_kp: float = 1.0
    w_limit: float = 0.1
    w_sil: float = 1.0
    w_kpg: float = 0.5
    w_arap: float = 5.0
    lambda_far: float = 0.1
    lambda_schedule: Callable = None

    def __post_init__(self):
        if any(w < 0 for w in (self.w_kp, self.w_limit, self.w_sil, self.w_kpg, self.w_arap)):
            raise ValueError("loss weights must be non-negative")
        if self.lambda_schedule is None:
            far = self.lambda_far
            self.lambda_schedule = lambda depths, fraction: hierarchical_lambda(
                depths, fraction, far
            )


# ---------------------------------------------------------------------------
# individual terms
# ---------------------------------------------------------------------------

def keypoint_loss(world_landmarks, cameras, keypoints, sigma, lambdas=None, valid=None):
    """sum_c sum_m lambda_m sigma_cm || pi_c(P_m) - p_cm ||^2  (px^2).

    Landmarks behind a camera are skipped and counted, never NaN. Returns
    (loss, skipped). ``valid`` pins the skip mask (frozen evaluation).
    """
    P = to_tensor(world_landmarks)
    M = P.shape[0]
    lam = np.ones(M) if lambdas is None else np.asarray(lambdas, dtype=np.float64)
    total = torch.zeros((), dtype=DTYPE)
    skipped = 0
    for c, cam in enumerate(cameras):
        s = np.asarray(sigma[c], dtype=np.float64)
        pix, depth = project_with_depth(cam, P)
        in_front = depth.detach().numpy() > DEPTH_EPS
        use = in_front if valid is None else np.asarray(valid[c], dtype=bool)
        active = (s > 0) & use
        skipped += int(np.count_nonzero((s > 0) & ~use))
        if not active.any():
            continue
        idx = torch.as_tensor(np.nonzero(active)[0], dtype=torch.int64)
        target = to_tensor(np.asarray(keypoints[c], dtype=np.float64)[active])
        w = to_tensor((lam * s)[active])
        r = pix[idx] - target
        total = total + (w * (r**2).sum(dim=1)).sum()
    return total, skipped


def limit_loss(theta, limits):
    """Quadratic penalty outside per-DoF angle ranges, zero inside."""
    th = to_tensor(theta)
    lim = to_tensor(limits)
    over = torch.clamp(th - lim[:, 1], min=0.0)
    under = torch.clamp(lim[:, 0] - th, min=0.0)
    return (over**2 + under**2).sum()


def keypoint_graph_loss(deformed_landmarks, cameras, keypoints, sigma, valid=None):
    """Keypoint loss on graph-deformed landmarks; confidence-weighted only."""
    return keypoint_loss(deformed_landmarks, cameras, keypoints, sigma,
                         lambdas=None, valid=valid)


def arap_loss(rig, A, T, eps=ARAP_EPS):
    """As-rigid-as-possible energy over graph edges, smoothed L1 per component.

    sum_k sum_{l in N(k)} u_kl | R(A_k)(G_l - G_k) + T_k + G_k - (G_l + T_l) |_1
    with |x| ~ sqrt(x^2 + eps^2) for differentiability at zero.
    """
    rt = rig.tensors()
    A = to_tensor(A)
    T = to_tensor(T)
    src, dst = rt.edge_src, rt.edge_dst
    R = euler_to_matrix(A)
    Gk, Gl = rt.node_pos[src], rt.node_pos[dst]
    d = torch.einsum("eab,eb->ea", R[src], Gl - Gk) + T[src] + Gk - (Gl + T[dst])
    l1 = torch.sqrt(d**2 + eps * eps).sum(dim=1)
    return (rt.edge_u * l1).sum()


def arap_smoothing_floor(rig, eps=ARAP_EPS):
    """Exact value of the smoothed L1 at a perfectly rigid configuration."""
    rt = rig.tensors()
    return float(rt.edge_u.sum()) * 3.0 * eps


# ---------------------------------------------------------------------------
# silhouette loss with frozen boundary state
# ---------------------------------------------------------------------------

@dataclass
class FrozenView:
    rows: np.ndarray        # (B_active,) rows into the frozen subset
    cells: np.ndarray       # (B_active, 2) pinned bilinear cells
    n_boundary: int         # |B_c| before the directional gate


@dataclass
class SilhouetteFrozen:
    subset: np.ndarray      # sorted union of boundary vertex ids
    views: list
    empty: bool = False


def freeze_silhouette(V_world, normals, faces, cameras, sils, edges=None,
                      edge_faces=None):
    """Boundary sets, directional gates, and DT cells at the current mesh.

    rho keeps a term when the DT gradient at the projection and the
    image-space outward normal agree (positive dot product).
    """
    V = np.asarray(V_world, dtype=np.float64)
    per_cam = []
    all_ids = []
    for cam, sil in zip(cameras, sils):
        b = boundary_vertices(cam, V, faces, normals, edges=edges, edge_faces=edge_faces)
        per_cam.append(b)
        all_ids.append(b.indices)
    subset = np.unique(np.concatenate(all_ids)) if all_ids else np.empty(0, dtype=np.int64)
    views = []
    from .camera import project_np

    for cam, sil, b in zip(cameras, sils, per_cam):
        if len(b.indices) == 0:
            views.append(FrozenView(np.empty(0, dtype=np.int64), np.empty((0, 2), dtype=np.int64), 0))
            continue
        pix, _ = project_np(cam, V[b.indices])
        g = sample_grad(sil.grad, pix)
        rho = (g * b.normals2d).sum(axis=1) > 0.0
        keep = b.indices[rho]
        rows = np.searchsorted(subset, keep)
        cells = bilinear_cells(pix[rho], sil.dt.shape)
        views.append(FrozenView(rows=rows, cells=cells, n_boundary=len(b.indices)))
    empty = all(v.n_boundary == 0 for v in views)
    return SilhouetteFrozen(subset=subset, views=views, empty=empty)


def silhouette_loss(V_world_sub, cameras, sils, frozen):
    """sum_c sum_{i in B_c, rho=1} D_c(pi_c(V_i))^2 over the frozen state.

    ``V_world_sub`` rows align with ``frozen.subset``.
    """
    total = torch.zeros((), dtype=DTYPE)
    for cam, sil, view in zip(cameras, sils, frozen.views):
        if len(view.rows) == 0:
            continue
        pts = V_world_sub[torch.as_tensor(view.rows, dtype=torch.int64)]
        pix, _ = project_with_depth(cam, pts)
        d = sample_bilinear(sil.dt_tensor(), pix, cells=view.cells)
        total = total + (d**2).sum()
    return total


def silhouette_loss_full(rig, V_world, cameras, sils):
    """Convenience wrapper: freeze at the given mesh, then evaluate.

    Returns (loss, frozen).
    """
    from .assets import vertex_normals

    V = V_world.detach().numpy() if isinstance(V_world, torch.Tensor) else np.asarray(V_world)
    normals = vertex_normals(V, rig.mesh.faces)
    frozen = freeze_silhouette(V, normals, rig.mesh.faces, cameras, sils,
                               edges=rig.mesh.edges, edge_faces=rig.mesh.edge_faces)
    Vt = to_tensor(V_world)
    sub = torch.as_tensor(frozen.subset, dtype=torch.int64)
    return silhouette_loss(Vt[sub], cameras, sils, frozen), frozen


# ---------------------------------------------------------------------------
# stage objectives
# ---------------------------------------------------------------------------

@dataclass
class PoseContext:
    """Everything the pose objective needs besides (theta, alpha)."""

    rig: object
    cameras: list
    keypoints: np.ndarray           # (C, M, 2)
    sigma: np.ndarray               # (C, M)
    rays: RayBundle
    weights: LossWeights
    input_view: int = 0
    sigma_weighted_w: bool = True
    lambdas: Optional[np.ndarray] = None
    valid: Optional[np.ndarray] = None


def pose_objective(ctx, theta, alpha):
    """Stage-A objective; returns components and the solved translation."""
    rig = ctx.rig
    P = kinematics.forward_landmarks(rig, theta, alpha)
    Rc = to_tensor(ctx.cameras[ctx.input_view].R)
    Q = P @ Rc  # row-wise R^T P
    t = solve_translation(Q, ctx.rays, ctx.sigma_weighted_w)
    world = Q + t
    kp, skipped = keypoint_loss(world, ctx.cameras, ctx.keypoints, ctx.sigma,
                                lambdas=ctx.lambdas, valid=ctx.valid)
    lim = limit_loss(theta, rig.skeleton.limits)
    w = ctx.weights
    total = w.w_kp * kp + w.w_limit * lim
    return {"total": total, "kp": kp, "limit": lim, "kp_skipped": skipped, "t": t}


def freeze_pose(ctx, theta, alpha):
    """Pin the behind-camera skip mask at the current parameters."""
    with torch.no_grad():
        out = pose_objective(
            PoseContext(ctx.rig, ctx.cameras, ctx.keypoints, ctx.sigma, ctx.rays,
                        ctx.weights, ctx.input_view, ctx.sigma_weighted_w,
                        ctx.lambdas, None),
            theta, alpha,
        )
        P = kinematics.forward_landmarks(ctx.rig, theta, alpha)
        Rc = to_tensor(ctx.cameras[ctx.input_view].R)
        world = P @ Rc + out["t"]
        valid = np.zeros_like(ctx.sigma, dtype=bool)
        for c, cam in enumerate(ctx.cameras):
            _, depth = project_with_depth(cam, world)
            valid[c] = depth.numpy() > DEPTH_EPS
    ctx.valid = valid
    return valid


@dataclass
class DeformContext:
    """Everything the deform objective needs besides (A, T).

    The pose is frozen: node transforms, input-camera rotation, and the
    solved translation are constants here.
    """

    rig: object
    cameras: list
    keypoints: np.ndarray
    sigma: np.ndarray
    sils: list
    node_tf: kinematics.NodeTransforms
    t: torch.Tensor
    weights: LossWeights
    input_view: int = 0
    frozen: Optional[SilhouetteFrozen] = None
    kp_valid: Optional[np.ndarray] = None


def deform_objective(ctx, A, T):
    """Stage-B objective on the frozen boundary/gate state."""
    rig = ctx.rig
    cam_in = ctx.cameras[ctx.input_view]
    frozen = ctx.frozen
    if frozen is None:
        raise ValueError("deform_objective requires frozen silhouette state; call freeze_deform")
    sub = frozen.subset
    if len(sub):
        Y = graphdeform.deform(rig, A, T, subset=sub)
        Vc = graphdeform.pose(rig, Y, ctx.node_tf, subset=sub)
        Vw = graphdeform.to_world_mesh(Vc, cam_in, ctx.t)
        sil = silhouette_loss(Vw, ctx.cameras, ctx.sils, frozen)
    else:
        sil = torch.zeros((), dtype=DTYPE)
    Mlm = graphdeform.deform_landmarks(rig, A, T, ctx.node_tf, cam_in, ctx.t)
    kpg, skipped = keypoint_graph_loss(Mlm, ctx.cameras, ctx.keypoints, ctx.sigma,
                                       valid=ctx.kp_valid)
    ar = arap_loss(rig, A, T)
    w = ctx.weights
    total = w.w_sil * sil + w.w_kpg * kpg + w.w_arap * ar
    return {"total": total, "sil": sil, "kpg": kpg, "arap": ar,
            "kp_skipped": skipped, "sil_empty": frozen.empty}


def freeze_deform(ctx, A, T):
    """Recompute B_c, rho, DT cells, and keypoint masks at the current iterate."""
    from .assets import vertex_normals

    rig = ctx.rig
    cam_in = ctx.cameras[ctx.input_view]
    with torch.no_grad():
        Y = graphdeform.deform(rig, A, T)
        Vc = graphdeform.pose(rig, Y, ctx.node_tf)
        Vw = graphdeform.to_world_mesh(Vc, cam_in, ctx.t).numpy()
        normals = vertex_normals(Vw, rig.mesh.faces)
        ctx.frozen = freeze_silhouette(
            Vw, normals, rig.mesh.faces, ctx.cameras, ctx.sils,
            edges=rig.mesh.edges, edge_faces=rig.mesh.edge_faces,
        )
        Mlm = graphdeform.deform_landmarks(rig, A, T, ctx.node_tf, cam_in, ctx.t)
        valid = np.zeros_like(ctx.sigma, dtype=bool)
        for c, cam in enumerate(ctx.cameras):
            _, depth = project_with_depth(cam, Mlm)
            valid[c] = depth.numpy() > DEPTH_EPS
        ctx.kp_valid = valid
    return ctx.frozen
