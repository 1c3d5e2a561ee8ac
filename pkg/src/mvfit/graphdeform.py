"""Deformation layer: embedded-graph warp, skeletal posing, world transform.

Vertex pipeline per frame:
    Y      = graph-deformed rest vertices           (deform)
    V_cam  = skeletal pose applied to Y             (pose, DQS node blends)
    V_world = R_c^T V_cam + t                       (to_world_mesh)

Landmarks follow the same pipeline with a single weight-1.0 node each.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .kinematics import to_world
from .rotation import euler_to_matrix, to_tensor


@dataclass
class GraphParams:
    """Node Euler angles A (K, 3) and translations T (K, 3)."""

    A: np.ndarray
    T: np.ndarray

    @classmethod
    def zero(cls, graph):
        K = graph.node_count
        return cls(A=np.zeros((K, 3)), T=np.zeros((K, 3)))


@dataclass
class MeshState:
    """Per-frame vertex arrays: deformed (Y), posed (V_cam), world (V_world)."""

    Y: np.ndarray
    V_cam: np.ndarray
    V_world: np.ndarray


def deform(rig, A, T, subset=None):
    """Embedded-graph warp of the rest vertices.

    Y_i = sum_k w_ik (R(A_k)(vhat_i - G_k) + G_k + T_k); ``subset`` restricts
    the computation to the given vertex rows.
    """
    rt = rig.tensors()
    A = to_tensor(A)
    T = to_tensor(T)
    if A.shape[0] != rig.graph.node_count:
        raise ValueError("graph parameter count does not match graph")
    R = euler_to_matrix(A)  # (K, 3, 3)
    idx = rt.vert_node_idx
    w = rt.vert_node_w
    vhat = rt.vhat
    if subset is not None:
        sub = torch.as_tensor(subset, dtype=torch.int64)
        idx, w, vhat = idx[sub], w[sub], vhat[sub]
    G = rt.node_pos[idx]            # (n, I, 3)
    Rg = R[idx]                     # (n, I, 3, 3)
    Tg = T[idx]
    local = vhat[:, None, :] - G
    moved = torch.einsum("niab,nib->nia", Rg, local) + G + Tg
    return (w[:, :, None] * moved).sum(dim=1)


def pose(rig, Y, node_tf, subset=None):
    """Skeletal posing of deformed vertices via blended node transforms.

    V_i = sum_k w_ik (R_sk,k Y_i + t_sk,k).
    """
    rt = rig.tensors()
    idx = rt.vert_node_idx
    w = rt.vert_node_w
    if subset is not None:
        sub = torch.as_tensor(subset, dtype=torch.int64)
        idx, w = idx[sub], w[sub]
    Rg = node_tf.R[idx]             # (n, I, 3, 3)
    tg = node_tf.t[idx]
    moved = torch.einsum("niab,nb->nia", Rg, to_tensor(Y)) + tg
    return (w[:, :, None] * moved).sum(dim=1)


def to_world_mesh(V_cam, camera, t):
    return to_world(V_cam, camera, t)


def deform_landmarks(rig, A, T, node_tf, camera, t):
    """Graph-deformed, posed, world-space landmarks M (M, 3).

    Each landmark is bound to its geodesically closest node with weight 1,
    so both the warp and the pose use that single node's transform.
    """
    rt = rig.tensors()
    A = to_tensor(A)
    T = to_tensor(T)
    g = rt.landmark_nodes
    R = euler_to_matrix(A[g])       # (M, 3, 3)
    G = rt.node_pos[g]
    Y = torch.einsum("mab,mb->ma", R, rt.landmark_rest - G) + G + T[g]
    Vc = torch.einsum("mab,mb->ma", node_tf.R[g], Y) + node_tf.t[g]
    return to_world(Vc, camera, t)


def mesh_state(rig, theta, alpha, t, A, T, camera):
    """Full per-frame pipeline as numpy arrays (export/evaluation helper)."""
    from .kinematics import node_transforms

    with torch.no_grad():
        node_tf = node_transforms(rig, theta, alpha)
        Y = deform(rig, A, T)
        V_cam = pose(rig, Y, node_tf)
        V_world = to_world_mesh(V_cam, camera, t)
    return MeshState(Y=Y.numpy(), V_cam=V_cam.numpy(), V_world=V_world.numpy())
