"""Staged per-frame optimization: pose first, then graph deformation.

Stage A optimizes joint angles and the root rotation against the keypoint
and joint-limit losses, with the world translation re-solved in closed
form inside every iteration (gradients flow through the solve). Stage B
freezes the pose and optimizes the embedded-graph parameters against
silhouette, graph-keypoint, and ARAP losses, re-freezing the boundary
sets each iteration.

The optimizer is Adam with an exponential step decay; the returned
iterate is the best-loss one visited, and optimization stops early once
the best has not improved for ``patience`` iterations.
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .align import rays_from_detections
from .errors import DataError, MvfitError, NumericalError
from .graphdeform import GraphParams, MeshState, mesh_state
from .kinematics import PoseParams, node_transforms
from .losses import (DeformContext, LossWeights, PoseContext, clamp_confidence,
                     deform_objective, freeze_deform, pose_objective)
from .rotation import DTYPE


@dataclass
class FitConfig:
    pose_iterations: int = 300
    deform_iterations: int = 300
    pose_lr: float = 1e-2
    deform_lr: float = 1e-3
    lr_decay: float = 0.05          # final lr as a fraction of the initial
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 50              # early stop when best stalls this long
    init_policy: str = "warm"       # warm | rest
    stages: str = "both"            # pose | both
    input_view: int = 0
    sigma_weighted_w: bool = True
    smooth_kernel: int = 5
    smooth_sigma: float = 1.0
    jobs: int = 1
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.pose_iterations < 1 or self.deform_iterations < 1:
            raise DataError("iteration counts must be >= 1")
        if self.smooth_kernel % 2 != 1:
            raise DataError("smoothing kernel size must be odd")
        if self.init_policy not in ("warm", "rest"):
            raise DataError(f"unknown init policy {self.init_policy!r}")
        if self.stages not in ("pose", "both"):
            raise DataError(f"unknown stages {self.stages!r}")


@dataclass
class FrameResult:
    frame: int
    pose: PoseParams
    graph: GraphParams
    mesh: MeshState
    trace: dict
    status: str = "ok"
    timings: dict = field(default_factory=dict)


@dataclass
class PoseFitResult:
    theta: np.ndarray
    alpha: np.ndarray
    t: np.ndarray
    trace: list
    iterations: int


@dataclass
class DeformFitResult:
    A: np.ndarray
    T: np.ndarray
    trace: list
    iterations: int


def _decayed_lr(lr0, decay, it, total):
    return lr0 * decay ** (it / max(total, 1))


def fit_pose(rig, obs, cameras, config, init=None):
    """Stage A: fit (theta, alpha) with closed-form t inside the loop."""
    skel = rig.skeleton
    sigma = clamp_confidence(obs.sigma)
    if int((sigma > 0).sum()) < 2:
        raise DataError("need at least two confident keypoint detections")
    rays = rays_from_detections(cameras, obs.keypoints, sigma)
    ctx = PoseContext(rig, cameras, obs.keypoints, sigma, rays, config.weights,
                      input_view=config.input_view,
                      sigma_weighted_w=config.sigma_weighted_w)
    if init is None:
        init = PoseParams.rest(skel)
    theta = torch.as_tensor(np.asarray(init.theta, dtype=np.float64)).clone().requires_grad_(True)
    alpha = torch.as_tensor(np.asarray(init.alpha, dtype=np.float64)).clone().requires_grad_(True)
    opt = torch.optim.Adam([theta, alpha], lr=config.pose_lr,
                           betas=(config.adam_beta1, config.adam_beta2),
                           eps=config.adam_eps)
    total_iters = config.pose_iterations
    depths = skel.landmark_depth
    best = None
    stall = 0
    trace = []
    it = 0
    for it in range(total_iters + 1):
        ctx.lambdas = config.weights.lambda_schedule(depths, it / total_iters)
        ctx.valid = None  # recomputed inside, frozen within the evaluation
        out = pose_objective(ctx, theta, alpha)
        loss = float(out["total"].detach())
        if not np.isfinite(loss):
            raise NumericalError(f"pose stage: non-finite loss at iteration {it}")
        trace.append({"total": loss, "kp": float(out["kp"]),
                      "limit": float(out["limit"]), "kp_skipped": out["kp_skipped"]})
        if best is None or loss < best[0]:
            best = (loss, theta.detach().numpy().copy(), alpha.detach().numpy().copy(),
                    out["t"].detach().numpy().copy())
            stall = 0
        else:
            stall += 1
        if it == total_iters or stall > config.patience:
            break
        opt.zero_grad()
        out["total"].backward()
        for g in opt.param_groups:
            g["lr"] = _decayed_lr(config.pose_lr, config.lr_decay, it, total_iters)
        opt.step()
    _, th, al, t = best
    return PoseFitResult(theta=th, alpha=al, t=t, trace=trace, iterations=it)


def fit_deform(rig, pose_result, obs, cameras, config, init=None):
    """Stage B: fit graph parameters (A, T) under a frozen pose."""
    if rig.graph is None:
        raise DataError("rig has no deformation graph")
    sigma = clamp_confidence(obs.sigma)
    with torch.no_grad():
        node_tf = node_transforms(rig, pose_result.theta, pose_result.alpha)
    ctx = DeformContext(rig, cameras, obs.keypoints, sigma, obs.sils, node_tf,
                        torch.as_tensor(pose_result.t, dtype=DTYPE),
                        config.weights, input_view=config.input_view)
    K = rig.graph.node_count
    if init is None:
        init = GraphParams.zero(rig.graph)
    A = torch.as_tensor(np.asarray(init.A, dtype=np.float64)).clone().requires_grad_(True)
    T = torch.as_tensor(np.asarray(init.T, dtype=np.float64)).clone().requires_grad_(True)
    opt = torch.optim.Adam([A, T], lr=config.deform_lr,
                           betas=(config.adam_beta1, config.adam_beta2),
                           eps=config.adam_eps)
    total_iters = config.deform_iterations
    best = None
    stall = 0
    trace = []
    it = 0
    pool = ThreadPoolExecutor(config.jobs) if config.jobs > 1 else None
    try:
        for it in range(total_iters + 1):
            _freeze_deform_parallel(ctx, A.detach().numpy(), T.detach().numpy(), pool)
            out = deform_objective(ctx, A, T)
            loss = float(out["total"].detach())
            if not np.isfinite(loss):
                raise NumericalError(f"deform stage: non-finite loss at iteration {it}")
            trace.append({"total": loss, "sil": float(out["sil"]), "kpg": float(out["kpg"]),
                          "arap": float(out["arap"]), "kp_skipped": out["kp_skipped"],
                          "n_boundary": sum(v.n_boundary for v in ctx.frozen.views),
                          "sil_empty": bool(out["sil_empty"])})
            if best is None or loss < best[0]:
                best = (loss, A.detach().numpy().copy(), T.detach().numpy().copy())
                stall = 0
            else:
                stall += 1
            if it == total_iters or stall > config.patience:
                break
            opt.zero_grad()
            out["total"].backward()
            for g in opt.param_groups:
                g["lr"] = _decayed_lr(config.deform_lr, config.lr_decay, it, total_iters)
            opt.step()
    finally:
        if pool is not None:
            pool.shutdown()
    _, Ab, Tb = best
    return DeformFitResult(A=Ab, T=Tb, trace=trace, iterations=it)


def _freeze_deform_parallel(ctx, A, T, pool):
    """freeze_deform, optionally extracting per-camera boundaries in threads."""
    if pool is None:
        freeze_deform(ctx, A, T)
        return
    from .assets import vertex_normals
    from .losses import SilhouetteFrozen, freeze_silhouette
    from . import graphdeform
    from .camera import project_with_depth
    from .camera import DEPTH_EPS

    rig = ctx.rig
    cam_in = ctx.cameras[ctx.input_view]
    with torch.no_grad():
        Y = graphdeform.deform(rig, A, T)
        Vc = graphdeform.pose(rig, Y, ctx.node_tf)
        Vw = graphdeform.to_world_mesh(Vc, cam_in, ctx.t).numpy()
        normals = vertex_normals(Vw, rig.mesh.faces)

        def one(ci):
            return freeze_silhouette(Vw, normals, rig.mesh.faces,
                                     [ctx.cameras[ci]], [ctx.sils[ci]],
                                     edges=rig.mesh.edges, edge_faces=rig.mesh.edge_faces)

        parts = list(pool.map(one, range(len(ctx.cameras))))
        # stitch single-camera freezes into one consistent subset
        subset = np.unique(np.concatenate([p.subset for p in parts]))
        views = []
        for p in parts:
            v = p.views[0]
            rows = np.searchsorted(subset, p.subset[v.rows]) if len(v.rows) else v.rows
            views.append(replace(v, rows=rows))
        ctx.frozen = SilhouetteFrozen(subset=subset, views=views,
                                      empty=all(v.n_boundary == 0 for v in views))
        Mlm = graphdeform.deform_landmarks(rig, A, T, ctx.node_tf, cam_in, ctx.t)
        valid = np.zeros_like(ctx.sigma, dtype=bool)
        for c, cam in enumerate(ctx.cameras):
            _, depth = project_with_depth(cam, Mlm)
            valid[c] = depth.numpy() > DEPTH_EPS
        ctx.kp_valid = valid


def smooth_sequence(meshes, kernel_size=5, sigma=1.0):
    """Gaussian temporal smoothing of mesh states, renormalized at the ends."""
    if not meshes:
        raise DataError("empty sequence")
    h = (kernel_size - 1) // 2
    ks = np.exp(-np.arange(-h, h + 1) ** 2 / (2.0 * sigma * sigma))
    out = []
    n = len(meshes)
    for i in range(n):
        lo = max(0, i - h)
        hi = min(n - 1, i + h)
        w = ks[lo - i + h : hi - i + h + 1]
        w = w / w.sum()
        fields = {}
        for name in ("Y", "V_cam", "V_world"):
            acc = np.zeros_like(getattr(meshes[i], name))
            for k, j in enumerate(range(lo, hi + 1)):
                acc += w[k] * getattr(meshes[j], name)
            fields[name] = acc
        out.append(MeshState(**fields))
    return out


@dataclass
class SequenceResult:
    frames: list
    smoothed: list  # MeshState per successful frame, temporally smoothed


def fit_sequence(rig, dataset, config, frames=None):
    """Fit every frame (pose, then deformation), warm-starting from the last.

    Failed frames are recorded with their error and the next frame
    re-initializes from the rest pose. When warm start is disabled and
    ``config.jobs`` > 1, independent frames run in parallel threads.
    """
    ids = list(dataset.frame_ids() if frames is None else frames)
    cameras = dataset.cameras

    if config.init_policy == "rest" and config.jobs > 1:
        with ThreadPoolExecutor(config.jobs) as pool:
            results = list(pool.map(
                lambda fid: _fit_one(rig, dataset, cameras, config, fid, None), ids
            ))
    else:
        results = []
        prev = None
        for fid in ids:
            res = _fit_one(rig, dataset, cameras, config, fid, prev)
            prev = res.pose if res.status == "ok" and config.init_policy == "warm" else None
            results.append(res)

    good = [r for r in results if r.status == "ok"]
    smoothed = smooth_sequence([r.mesh for r in good],
                               config.smooth_kernel, config.smooth_sigma) if good else []
    return SequenceResult(frames=results, smoothed=smoothed)


def _fit_one(rig, dataset, cameras, config, fid, warm):
    t0 = time.time()
    try:
        obs = dataset.load_frame(fid)
        init = warm if warm is not None else None
        pr = fit_pose(rig, obs, cameras, config, init=init)
        t1 = time.time()
        if config.stages == "both":
            dr = fit_deform(rig, pr, obs, cameras, config)
            A, T = dr.A, dr.T
            dtrace = dr.trace
        else:
            g = GraphParams.zero(rig.graph)
            A, T = g.A, g.T
            dtrace = []
        t2 = time.time()
        mesh = mesh_state(rig, pr.theta, pr.alpha, pr.t, A, T,
                          cameras[config.input_view])
        return FrameResult(
            frame=fid,
            pose=PoseParams(theta=pr.theta, alpha=pr.alpha, t=pr.t),
            graph=GraphParams(A=A, T=T),
            mesh=mesh,
            trace={"pose": pr.trace, "deform": dtrace},
            timings={"pose_s": t1 - t0, "deform_s": t2 - t1},
        )
    except MvfitError as exc:
        g = GraphParams.zero(rig.graph) if rig.graph is not None else GraphParams(
            np.zeros((0, 3)), np.zeros((0, 3)))
        rest = PoseParams.rest(rig.skeleton)
        rest.t = np.zeros(3)
        empty = MeshState(Y=rig.mesh.vertices.copy(),
                          V_cam=rig.mesh.vertices.copy(),
                          V_world=rig.mesh.vertices.copy())
        return FrameResult(frame=fid, pose=rest, graph=g, mesh=empty,
                           trace={"pose": [], "deform": []},
                           status=f"failed: {exc}")
