"""Synthetic multi-view dataset generation with known ground truth.

Motion model: per-DoF sinusoids inside the joint limits, restricted to
DoF that actually move some landmark (distal twists that no keypoint can
observe stay at rest). The root translation drifts smoothly; graph
deformation follows an explicit per-node script. Keypoints are exact
projections of the forward-kinematics landmarks plus optional Gaussian
pixel noise and confidence dropout; masks are rasterized from the
deformed, posed world mesh and distance transforms follow from them.

Generation is a pure function of (rig, config): same seed, same bytes.
"""

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import dataio, graphdeform, kinematics
from .camera import ring_cameras, project_np, save_cameras
from .dtransform import distance_transform
from .errors import DataError
from .raster import rasterize_mask
from .rotation import DTYPE


@dataclass
class NodeScript:
    """Scripted ground-truth deformation of one graph node.

    ``profile`` is "constant" or "sine" (one full period over the sequence).
    """

    node: int
    T: tuple = (0.0, 0.0, 0.0)
    A: tuple = (0.0, 0.0, 0.0)
    profile: str = "constant"

    def at(self, fraction):
        scale = 1.0 if self.profile == "constant" else np.sin(2.0 * np.pi * fraction)
        return np.asarray(self.A) * scale, np.asarray(self.T) * scale


@dataclass
class SynthConfig:
    seed: int = 0
    cameras: int = 7
    ring_radius: float = 3.2
    height_jitter: float = 0.25
    frames: int = 20
    image_size: int = 192
    focal: float = 230.0
    motion_amplitude: float = 0.5      # fraction of the per-DoF half-range
    motion_freq: tuple = (0.5, 1.5)    # cycles over the sequence
    translation_drift: tuple = (0.25, 0.0, 0.18)
    deform_script: list = field(default_factory=list)
    ring_phase: float = 0.0            # camera ring start angle (rad)
    noise_px: float = 0.0
    dropout: float = 0.0               # probability of sigma -> 0 per detection
    input_view: int = 0

    def __post_init__(self):
        if self.cameras < 2:
            raise DataError("need at least two cameras")


def default_cameras(rig, count, image_size=192, focal=None, radius=3.2,
                    height_jitter=0.25, seed=0, phase=0.0):
    """Ring cameras around the rig's rest-pose centroid."""
    target = rig.mesh.vertices.mean(axis=0)
    rng = np.random.default_rng(seed + 7919)
    return ring_cameras(count, radius, target, image_size=image_size,
                        focal=focal, height_jitter=height_jitter, rng=rng,
                        phase=phase)


def observable_dofs(rig, tol=1e-9):
    """DoF whose motion displaces at least one landmark (numeric probe)."""
    skel = rig.skeleton
    base = kinematics.forward_landmarks(rig, np.zeros(skel.dof_count), np.zeros(3)).numpy()
    out = np.zeros(skel.dof_count, dtype=bool)
    for d in range(skel.dof_count):
        th = np.zeros(skel.dof_count)
        th[d] = 1e-3
        moved = kinematics.forward_landmarks(rig, th, np.zeros(3)).numpy()
        out[d] = np.abs(moved - base).max() > tol
    return out


@dataclass
class MotionModel:
    center: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray

    def theta(self, fraction):
        return self.center + self.amp * np.sin(
            2.0 * np.pi * self.freq * fraction + self.phase
        )


def sample_motion(rig, config, rng):
    """Per-DoF sinusoid parameters staying strictly inside the limits."""
    skel = rig.skeleton
    lo, hi = skel.limits[:, 0], skel.limits[:, 1]
    span = hi - lo
    center = 0.5 * (lo + hi)
    obs = observable_dofs(rig)
    amp = config.motion_amplitude * 0.5 * span * rng.uniform(0.5, 1.0, skel.dof_count)
    amp = np.minimum(amp, 0.48 * span)
    amp[~obs] = 0.0
    # bias the oscillation centers toward the rest pose, then keep
    # center +- amp strictly inside the limits
    center = 0.25 * center
    center = np.clip(center, lo + amp + 0.01 * span, hi - amp - 0.01 * span)
    freq = rng.uniform(config.motion_freq[0], config.motion_freq[1], skel.dof_count)
    phase = rng.uniform(0.0, 2.0 * np.pi, skel.dof_count)
    return MotionModel(center=center, amp=amp, freq=freq, phase=phase)


@dataclass
class RenderedFrame:
    """One synthetic frame: observations plus the ground truth behind them."""

    keypoints: np.ndarray
    sigma: np.ndarray
    masks: list
    sils: list
    theta: np.ndarray
    alpha: np.ndarray
    t: np.ndarray
    A: np.ndarray
    T: np.ndarray


def render_observation(rig, cameras, theta, alpha, t, A, T, input_view=0,
                       noise_px=0.0, dropout=0.0, rng=None):
    """Render one frame: keypoints from FK landmarks, masks from the mesh."""
    if rng is None:
        rng = np.random.default_rng(0)
    cam_in = cameras[input_view]
    with torch.no_grad():
        P = kinematics.forward_landmarks(rig, theta, alpha)
        world_lm = kinematics.to_world(P, cam_in, t).numpy()
        node_tf = kinematics.node_transforms(rig, theta, alpha)
        Y = graphdeform.deform(rig, A, T)
        Vc = graphdeform.pose(rig, Y, node_tf)
        Vw = graphdeform.to_world_mesh(Vc, cam_in, t).numpy()
    C, M = len(cameras), len(world_lm)
    kp = np.zeros((C, M, 2))
    sigma = np.ones((C, M))
    masks, sils = [], []
    for c, cam in enumerate(cameras):
        pix, depth = project_np(cam, world_lm)
        if np.any(depth <= 0):
            raise DataError(f"landmark behind camera {c} during generation")
        if noise_px > 0:
            pix = pix + rng.normal(0.0, noise_px, pix.shape)
        kp[c] = pix
        if dropout > 0:
            sigma[c] *= (rng.uniform(size=M) >= dropout).astype(np.float64)
        mask = rasterize_mask(cam, Vw, rig.mesh.faces)
        if mask.sum() == 0:
            raise DataError(f"subject out of view of camera {c}")
        masks.append(mask)
        sils.append(distance_transform(mask))
    return RenderedFrame(keypoints=kp, sigma=sigma, masks=masks, sils=sils,
                         theta=np.asarray(theta, dtype=np.float64).copy(),
                         alpha=np.asarray(alpha, dtype=np.float64).copy(),
                         t=np.asarray(t, dtype=np.float64).copy(),
                         A=np.asarray(A, dtype=np.float64).copy(),
                         T=np.asarray(T, dtype=np.float64).copy())


def gt_frame_params(rig, config, motion, fraction):
    """Ground-truth (theta, alpha, t, A, T) at a sequence fraction."""
    skel = rig.skeleton
    K = rig.graph.node_count
    theta = motion.theta(fraction)
    theta = np.clip(theta, skel.limits[:, 0], skel.limits[:, 1])
    alpha = np.zeros(3)
    t = np.asarray(config.translation_drift) * fraction
    A = np.zeros((K, 3))
    T = np.zeros((K, 3))
    for script in config.deform_script:
        a, tt = script.at(fraction)
        A[script.node] += a
        T[script.node] += tt
    return theta, alpha, t, A, T


def generate(rig, config, out_dir):
    """Write a full synthetic dataset; deterministic per seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    cameras = default_cameras(rig, config.cameras, image_size=config.image_size,
                              focal=config.focal, radius=config.ring_radius,
                              height_jitter=config.height_jitter, seed=config.seed,
                              phase=config.ring_phase)
    save_cameras(out / "cameras.json", cameras)
    motion = sample_motion(rig, config, rng)
    F = config.frames
    for f in range(F):
        fraction = f / max(F - 1, 1)
        theta, alpha, t, A, T = gt_frame_params(rig, config, motion, fraction)
        frame = render_observation(rig, cameras, theta, alpha, t, A, T,
                                   input_view=config.input_view,
                                   noise_px=config.noise_px,
                                   dropout=config.dropout, rng=rng)
        dataio.write_frame(out, f, cameras, frame.keypoints, frame.sigma,
                           frame.masks, [s.dt for s in frame.sils])
        dataio.write_gt(out, f, theta, alpha, t, A, T)
    dataio.write_manifest(
        out, "synth", _config_doc(config), config.seed, deterministic=True,
        extra={
            "frames": F,
            "cameras": config.cameras,
            "input_view": config.input_view,
            "image_size": config.image_size,
            "noise_px": config.noise_px,
            "dropout": config.dropout,
        },
    )
    return dataio.Dataset(out)


def _config_doc(config):
    doc = {k: v for k, v in vars(config).items() if k != "deform_script"}
    doc["deform_script"] = [vars(s).copy() for s in config.deform_script]
    for s in doc["deform_script"]:
        s["A"] = list(np.asarray(s["A"], dtype=np.float64))
        s["T"] = list(np.asarray(s["T"], dtype=np.float64))
    doc["motion_freq"] = list(doc["motion_freq"])
    doc["translation_drift"] = list(doc["translation_drift"])
    return doc
