"""Torch-side constant tensors derived from a CharacterRig.

Everything here is immutable after construction and shared by the
kinematics, deformation, and loss code; float64 throughout.
"""

import numpy as np
import torch

from .rotation import DTYPE


class RigTensors:
    def __init__(self, rig):
        mesh, skel = rig.mesh, rig.skeleton
        t = lambda x: torch.as_tensor(x, dtype=DTYPE)
        self.vhat = t(mesh.vertices)
        self.normals_rest = t(mesh.vertex_normals)

        self.parents = [int(p) for p in skel.parents]
        self.offsets = t(skel.offsets)
        self.rest_joints = t(skel.rest_joints)
        self.joint_dofs = []  # per joint: list of (dof index, axis char)
        for j in range(len(skel.joint_names)):
            dofs = [
                (d, skel.dof_axis[d])
                for d in range(skel.dof_count)
                if skel.dof_joint[d] == j
            ]
            self.joint_dofs.append(dofs)
        self.limits = t(skel.limits)
        self.landmark_joint = torch.as_tensor(
            [lm.joint for lm in skel.landmarks], dtype=torch.int64
        )
        self.landmark_offset = t(np.array([lm.offset for lm in skel.landmarks]))
        self.landmark_rest = t(skel.landmark_rest)

        if rig.graph is not None:
            g = rig.graph
            self.node_pos = t(g.node_positions)
            self.vert_node_idx = torch.as_tensor(g.vert_node_idx, dtype=torch.int64)
            self.vert_node_w = t(g.vert_node_w)
            self.edge_src = torch.as_tensor(g.edge_src, dtype=torch.int64)
            self.edge_dst = torch.as_tensor(g.edge_dst, dtype=torch.int64)
            self.edge_u = t(g.edge_u)
            self.node_skin = t(g.node_skin)
            self.landmark_nodes = torch.as_tensor(g.landmark_nodes, dtype=torch.int64)
