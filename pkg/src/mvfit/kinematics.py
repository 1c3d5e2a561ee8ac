"""Differentiable forward kinematics and dual-quaternion node transforms.

The kinematics layer works in a camera-root-relative frame: the root joint
sits at the origin (plus its own rest offset) and the whole skeleton is
pre-rotated by the root rotation alpha. ``to_world`` moves results into
world space using the input camera's rotation and the global translation.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import NumericalError
from .rotation import (
    DTYPE,
    axis_rotation,
    dualquat_to_rigid,
    euler_to_matrix,
    quat_mul,
    rigid_to_dualquat,
    to_tensor,
)


@dataclass
class PoseParams:
    """Joint angles theta (D,), root rotation alpha (3,), translation t (3,).

    t is produced by the global alignment layer, never optimized directly.
    """

    theta: np.ndarray
    alpha: np.ndarray
    t: np.ndarray = None

    @classmethod
    def rest(cls, skeleton):
        return cls(theta=np.zeros(skeleton.dof_count), alpha=np.zeros(3), t=np.zeros(3))


@dataclass
class NodeTransforms:
    """Per-node rigid transforms (R (K, 3, 3), t (K, 3)) from skinning."""

    R: torch.Tensor
    t: torch.Tensor


def fk_joints(rig, theta, alpha):
    """Forward kinematics: per-joint world rotations (J,3,3) and positions (J,3).

    "World" here means camera-root-relative: root at its rest offset
    (the shipped assets use a zero root offset), everything pre-rotated
    by R(alpha).
    """
    rt = rig.tensors()
    theta = to_tensor(theta)
    alpha = to_tensor(alpha)
    if theta.numel() != rig.skeleton.dof_count:
        raise ValueError(
            f"theta has {theta.numel()} entries, skeleton has "
            f"{rig.skeleton.dof_count} DoF"
        )
    theta = theta.reshape(rig.skeleton.dof_count)
    R_alpha = euler_to_matrix(alpha)
    rots, poss = [], []
    for j, parent in enumerate(rt.parents):
        loc = None
        for d, axis in rt.joint_dofs[j]:
            Ra = axis_rotation(axis, theta[d])
            loc = Ra if loc is None else Ra @ loc
        if loc is None:
            loc = torch.eye(3, dtype=DTYPE)
        if parent < 0:
            R = R_alpha @ loc
            p = R_alpha @ rt.offsets[j]
        else:
            R = rots[parent] @ loc
            p = poss[parent] + rots[parent] @ rt.offsets[j]
        rots.append(R)
        poss.append(p)
    return torch.stack(rots), torch.stack(poss)


def forward_landmarks(rig, theta, alpha):
    """Camera-root-relative landmark positions P (M, 3)."""
    R, p = fk_joints(rig, theta, alpha)
    rt = rig.tensors()
    Rj = R[rt.landmark_joint]
    return p[rt.landmark_joint] + torch.einsum("mij,mj->mi", Rj, rt.landmark_offset)


def to_world(points, camera, t):
    """World coordinates: R_c^T p + t, rows of ``points`` (..., 3)."""
    Rc = to_tensor(camera.R)
    t = to_tensor(t)
    return to_tensor(points) @ Rc + t  # p @ R == R^T p row-wise


def bone_transforms(rig, theta, alpha):
    """Per-joint skinning transforms (dR (J,3,3), dt (J,3)).

    A point rigidly attached to joint j moves rest -> dR @ x + dt.
    Rest-pose world rotations are the identity, so dR is just the posed
    world rotation.
    """
    R, p = fk_joints(rig, theta, alpha)
    rt = rig.tensors()
    dt = p - torch.einsum("jab,jb->ja", R, rt.rest_joints)
    return R, dt


def node_transforms(rig, theta, alpha):
    """Per-graph-node rigid transforms via dual-quaternion skinning.

    Each bone transform becomes a unit dual quaternion; per node the bone
    quaternions are blended with the node's skinning weights after flipping
    signs into the hemisphere of the node's highest-weight bone.
    """
    if rig.graph is None:
        raise ValueError("rig has no deformation graph")
    dR, dt = bone_transforms(rig, theta, alpha)
    rt = rig.tensors()
    J = dR.shape[0]
    qr = torch.stack([rigid_to_dualquat(dR[j], dt[j])[0] for j in range(J)])
    tq = torch.cat([torch.zeros(J, 1, dtype=DTYPE), dt], dim=1)
    qd = 0.5 * quat_mul(tq, qr)

    w = rt.node_skin  # (K, J)
    pivot = torch.argmax(w, dim=1)  # ties -> lowest index
    dots = qr[pivot] @ qr.T  # (K, J) real-part alignment with the pivot bone
    sign = 1.0 - 2.0 * (dots.detach() < 0).to(DTYPE)
    ws = w * sign
    br = ws @ qr  # (K, 4)
    bd = ws @ qd
    norms = torch.linalg.norm(br, dim=1)
    bad = (norms.detach() < 1e-12).nonzero()
    if len(bad):
        raise NumericalError(
            f"antipodal cancellation while blending node {int(bad[0])}"
        )
    R, t = dualquat_to_rigid(br, bd)
    return NodeTransforms(R=R, t=t)
