"""Gradient extraction and finite-difference verification.

``gradient`` pulls reverse-mode gradients of a scalar objective with
respect to named parameter blocks; ``fd_check`` verifies them against
central finite differences evaluated under the objective's frozen sets
(the objective closure must carry its own frozen state). The production
gradient is always the analytic/reverse-mode one, never finite
differences.
"""

import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .rotation import DTYPE

ABS_SWITCH = 1e-8


@dataclass
class ParamBlocks:
    """Named parameter vectors with optional per-entry active masks."""

    blocks: dict
    active: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.blocks.items():
            t = torch.as_tensor(value, dtype=DTYPE)
            if not t.requires_grad:
                t = t.clone().requires_grad_(True)
            self.blocks[name] = t
            if name not in self.active:
                self.active[name] = np.ones(t.numel(), dtype=bool)

    def tensors(self):
        return list(self.blocks.values())

    def names(self):
        return list(self.blocks.keys())


def gradient(objective, blocks):
    """Per-block gradient vectors of a scalar objective as numpy arrays.

    The objective receives the ParamBlocks and must return a torch scalar
    built from the package's differentiable operations; anything else is
    rejected. Blocks the objective does not touch get zero gradients.
    """
    loss = objective(blocks)
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise TypeError(
            "objective did not return a scalar tensor; it must be composed "
            "of the registered differentiable operations"
        )
    tensors = blocks.tensors()
    grads = torch.autograd.grad(loss, tensors, allow_unused=True, retain_graph=False)
    out = {}
    for name, t, g in zip(blocks.names(), tensors, grads):
        g_np = np.zeros(t.numel()) if g is None else g.reshape(-1).detach().numpy().copy()
        g_np[~blocks.active[name]] = 0.0
        out[name] = g_np
    return out


def fd_check(objective, blocks, step=1e-5, seed=0, max_coords=None):
    """Worst per-block relative error of the analytic gradient vs. central FD.

    Below an ``ABS_SWITCH`` denominator the absolute error is reported
    instead (zero-gradient coordinates). ``max_coords`` subsamples large
    blocks reproducibly via ``seed``.
    """
    analytic = gradient(objective, blocks)
    rng = np.random.default_rng(seed)
    report = {}
    for name, t in blocks.blocks.items():
        flat = t.detach().reshape(-1).numpy().copy()
        coords = np.nonzero(blocks.active[name])[0]
        if max_coords is not None and len(coords) > max_coords:
            coords = np.sort(rng.choice(coords, size=max_coords, replace=False))
        worst = 0.0
        for i in coords:
            fd = _central_diff(objective, blocks, name, t, flat, int(i), step)
            a = analytic[name][i]
            denom = max(abs(a), abs(fd))
            err = abs(a - fd) if denom < ABS_SWITCH else abs(a - fd) / denom
            worst = max(worst, err)
        report[name] = worst
    return report


def _central_diff(objective, blocks, name, t, flat, i, step):
    shape = t.shape
    vals = []
    for s in (+step, -step):
        probe = flat.copy()
        probe[i] += s
        with torch.no_grad():
            t.data = torch.as_tensor(probe.reshape(shape), dtype=DTYPE)
            vals.append(float(objective(blocks)))
    t.data = torch.as_tensor(flat.reshape(shape), dtype=DTYPE)
    return (vals[0] - vals[1]) / (2.0 * step)


# ---------------------------------------------------------------------------
# gradcheck harness over both stage objectives
# ---------------------------------------------------------------------------

def run_gradcheck(rig, seed=0, n_configs=20, step=1e-5, tol=1e-4,
                  n_cameras=3, image_size=96, verbose=False):
    """FD-verify pose and deform objectives on random synthetic configurations.

    Returns (ok, report rows). Each configuration draws a random scene
    (pose within limits, random graph params, detections from a second
    random pose so residuals are non-trivial) and checks every parameter
    coordinate of both stage objectives.
    """
    from . import synthgen
    from .losses import (DeformContext, PoseContext, LossWeights, deform_objective,
                         freeze_deform, freeze_pose, pose_objective)
    from .align import rays_from_detections
    from .kinematics import node_transforms

    rng = np.random.default_rng(seed)
    cameras = synthgen.default_cameras(rig, n_cameras, image_size=image_size, seed=seed)
    weights = LossWeights()
    skel = rig.skeleton
    K = rig.graph.node_count
    rows = []
    ok = True
    start = time.time()
    for cfg in range(n_configs):
        theta0 = _random_pose(skel, rng)
        alpha0 = rng.uniform(-0.2, 0.2, 3)
        A0 = rng.uniform(-0.25, 0.25, (K, 3))
        T0 = rng.uniform(-0.05, 0.05, (K, 3))
        obs = synthgen.render_observation(rig, cameras, _random_pose(skel, rng),
                                          rng.uniform(-0.1, 0.1, 3),
                                          rng.uniform(-0.2, 0.2, 3),
                                          np.zeros((K, 3)), np.zeros((K, 3)))

        # pose stage: theta, alpha
        rays = rays_from_detections(cameras, obs.keypoints, obs.sigma)
        pctx = PoseContext(rig, cameras, obs.keypoints, obs.sigma, rays, weights,
                           lambdas=None)
        freeze_pose(pctx, theta0, alpha0)
        pb = ParamBlocks({"theta": theta0.copy(), "alpha": alpha0.copy()})
        pose_fn = lambda b: pose_objective(pctx, b.blocks["theta"], b.blocks["alpha"])["total"]
        pose_err = fd_check(pose_fn, pb, step=step, seed=seed)

        # deform stage: A, T (pose frozen at the observation's pose)
        with torch.no_grad():
            ntf = node_transforms(rig, obs.theta, obs.alpha)
        dctx = DeformContext(rig, cameras, obs.keypoints, obs.sigma, obs.sils,
                             ntf, torch.as_tensor(obs.t, dtype=DTYPE), weights)
        freeze_deform(dctx, A0, T0)
        db = ParamBlocks({"A": A0.copy(), "T": T0.copy()})
        deform_fn = lambda b: deform_objective(dctx, b.blocks["A"], b.blocks["T"])["total"]
        deform_err = fd_check(deform_fn, db, step=step, seed=seed)

        row = {"config": cfg, **{f"pose_{k}": v for k, v in pose_err.items()},
               **{f"deform_{k}": v for k, v in deform_err.items()}}
        rows.append(row)
        worst = max(list(pose_err.values()) + list(deform_err.values()))
        ok = ok and worst < tol
        if verbose:
            print(f"config {cfg:2d}: pose {pose_err} deform {deform_err}")
    elapsed = time.time() - start
    return ok, {"rows": rows, "elapsed_s": elapsed, "tol": tol}


def _random_pose(skel, rng, margin=0.1):
    lo = skel.limits[:, 0]
    hi = skel.limits[:, 1]
    span = hi - lo
    return rng.uniform(lo + margin * span, hi - margin * span)
