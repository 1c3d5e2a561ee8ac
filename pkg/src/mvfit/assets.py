"""Character rig assets: template mesh, skeleton, and embedded deformation graph.

File formats:
  * mesh: Wavefront OBJ (``v`` and triangular ``f`` records only)
  * skeleton: JSON with joints (parent / offset / rotation axes in application
    order), per-DoF angle limits, landmarks, per-vertex skinning, and the
    evaluation joint subset
  * rigidity sidecar: one integer class label per vertex, one per line;
    the class -> weight table arrives separately (rig.json or caller)

Euler conventions are shared with :mod:`mvfit.rotation` (x applied first).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, dijkstra

from .errors import DataError


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

def vertex_normals(vertices, faces):
    """Area-weighted vertex normals, normalized to unit length."""
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int64)
    fn = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
    vn = np.zeros_like(v)
    for c in range(3):
        np.add.at(vn, f[:, c], fn)
    norms = np.linalg.norm(vn, axis=1)
    norms[norms < 1e-20] = 1.0
    return vn / norms[:, None]


def mesh_edges(faces):
    """Unique undirected edges (E, 2) with lo < hi, sorted lexicographically."""
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


def edge_face_map(faces):
    """Unique edges plus the (up to two) incident face indices, -1 pad.

    Raises DataError if an edge is shared by more than two faces.
    """
    f = np.asarray(faces, dtype=np.int64)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    face_of = np.tile(np.arange(len(f)), 3)
    edges, inv = np.unique(e, axis=0, return_inverse=True)
    ef = np.full((len(edges), 2), -1, dtype=np.int64)
    count = np.zeros(len(edges), dtype=np.int64)
    order = np.argsort(inv, kind="stable")
    for idx in order:
        ei = inv[idx]
        if count[ei] >= 2:
            raise DataError(f"non-manifold edge {tuple(edges[ei])}")
        ef[ei, count[ei]] = face_of[idx]
        count[ei] += 1
    return edges, ef


def _vertex_adjacency(vertices, faces):
    edges = mesh_edges(faces)
    lengths = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
    n = len(vertices)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    data = np.concatenate([lengths, lengths])
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def geodesic_distances(adjacency, sources):
    """Geodesic (shortest-path) distances from each source vertex; (S, N)."""
    return dijkstra(adjacency, directed=False, indices=np.asarray(sources))


@dataclass
class TemplateMesh:
    """Rest-pose surface: vertices (N, 3) in meters, triangle faces (F, 3)."""

    vertices: np.ndarray
    faces: np.ndarray
    rigidity_class: np.ndarray
    vertex_normals: np.ndarray = None
    edges: np.ndarray = field(default=None, repr=False)
    edge_faces: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int64)
        self.rigidity_class = np.asarray(self.rigidity_class, dtype=np.int64)
        n = len(self.vertices)
        if self.faces.min(initial=0) < 0 or self.faces.max(initial=-1) >= n:
            raise DataError("face index out of range")
        if len(self.rigidity_class) != n:
            raise DataError("rigidity sidecar length != vertex count")
        if self.vertex_normals is None:
            self.vertex_normals = vertex_normals(self.vertices, self.faces)
        adj = _vertex_adjacency(self.vertices, self.faces)
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise DataError(f"mesh is not edge-connected ({ncomp} components)")
        self._adjacency = adj
        self.edges, self.edge_faces = edge_face_map(self.faces)

    @property
    def adjacency(self):
        return self._adjacency


def load_obj(path):
    """Load vertices and triangular faces from an OBJ file."""
    verts, faces = [], []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise DataError(f"{path}:{ln}: malformed vertex")
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) for tok in parts[1:]]
                if len(idx) != 3:
                    raise DataError(f"{path}:{ln}: only triangular faces supported")
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
    if not verts or not faces:
        raise DataError(f"{path}: no geometry found")
    return np.asarray(verts, dtype=np.float64), np.asarray(faces, dtype=np.int64)


def save_obj(path, vertices, faces):
    with open(path, "w") as fh:
        for v in np.asarray(vertices, dtype=np.float64):
            fh.write(f"v {float(v[0])!r} {float(v[1])!r} {float(v[2])!r}\n")
        for f in np.asarray(faces, dtype=np.int64):
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


# ---------------------------------------------------------------------------
# skeleton
# ---------------------------------------------------------------------------

@dataclass
class Landmark:
    name: str
    joint: int
    offset: np.ndarray


@dataclass
class Skeleton:
    """Kinematic tree with rotational DoF, landmarks, and vertex skinning.

    DoF order is joints in file order, each joint's axes in declared order.
    Joint 0 carries no global rotation; that lives in the separate root
    rotation parameter applied by the kinematics layer.
    """

    joint_names: list
    parents: np.ndarray
    offsets: np.ndarray
    joint_axes: list           # per joint: string over 'xyz', applied in order
    limits: np.ndarray         # (D, 2) radians
    landmarks: list
    skin_idx: np.ndarray       # (N, S) bone (= joint) indices, -1 pad
    skin_w: np.ndarray         # (N, S)
    eval_landmarks: np.ndarray
    root_landmark: int

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.limits = np.asarray(self.limits, dtype=np.float64)
        j = len(self.joint_names)
        for i, p in enumerate(self.parents):
            if p >= i or (p < 0 and i != 0) or p >= j:
                raise DataError(f"joint {i}: parent {p} violates topological order")
        if self.parents[0] != -1:
            raise DataError("joint 0 must be the root (parent -1)")
        self.dof_joint = []
        self.dof_axis = []
        for ji, axes in enumerate(self.joint_axes):
            for a in axes:
                if a not in "xyz":
                    raise DataError(f"joint {ji}: bad axis {a!r}")
                self.dof_joint.append(ji)
                self.dof_axis.append(a)
        self.dof_joint = np.asarray(self.dof_joint, dtype=np.int64)
        if len(self.limits) != self.dof_count:
            raise DataError("limits length != dof count")
        if np.any(self.limits[:, 0] > self.limits[:, 1]):
            bad = int(np.argmax(self.limits[:, 0] > self.limits[:, 1]))
            raise DataError(f"invalid limits on DoF {bad} (min > max)")
        for lm in self.landmarks:
            if not 0 <= lm.joint < j:
                raise DataError(f"landmark {lm.name}: joint index {lm.joint} invalid")
        if np.any(self.skin_w < -1e-12):
            raise DataError("negative skinning weight")
        sums = self.skin_w.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise DataError(f"skinning weights of vertex {bad} sum to {sums[bad]:.8f}")
        # rest pose: all local rotations are identity
        self.rest_joints = np.zeros((j, 3))
        self.joint_depth = np.zeros(j, dtype=np.int64)
        for i in range(j):
            p = self.parents[i]
            if p >= 0:
                self.rest_joints[i] = self.rest_joints[p] + self.offsets[i]
                self.joint_depth[i] = self.joint_depth[p] + 1
            else:
                self.rest_joints[i] = self.offsets[i]
        self.landmark_rest = np.array(
            [self.rest_joints[lm.joint] + lm.offset for lm in self.landmarks]
        )
        self.landmark_depth = np.array(
            [self.joint_depth[lm.joint] for lm in self.landmarks], dtype=np.int64
        )
        self.eval_landmarks = np.asarray(self.eval_landmarks, dtype=np.int64)

    @property
    def dof_count(self):
        return len(self.dof_joint)

    @property
    def landmark_count(self):
        return len(self.landmarks)

    def landmark_parents(self):
        """Parent relation on landmarks: nearest ancestor joint carrying one.

        Landmarks with a zero joint offset are treated as sitting on their
        joint; others fall back to their joint's landmark chain as well.
        Returns (M,) with -1 for the root landmark.
        """
        joint_lm = {}
        for i, lm in enumerate(self.landmarks):
            if np.allclose(lm.offset, 0.0) and lm.joint not in joint_lm:
                joint_lm[lm.joint] = i
        parents = np.full(self.landmark_count, -1, dtype=np.int64)
        for i, lm in enumerate(self.landmarks):
            j = lm.joint if not np.allclose(lm.offset, 0.0) else self.parents[lm.joint]
            while j >= 0:
                if j in joint_lm and joint_lm[j] != i:
                    parents[i] = joint_lm[j]
                    break
                j = self.parents[j]
        return parents


def load_skeleton(path, n_vertices, max_skin=8):
    with open(path) as fh:
        data = json.load(fh)
    return skeleton_from_dict(data, n_vertices, max_skin)


def skeleton_from_dict(data, n_vertices, max_skin=8):
    joints = data["joints"]
    names = [j["name"] for j in joints]
    parents = [j["parent"] for j in joints]
    offsets = [j["offset"] for j in joints]
    axes = [j.get("axes", "") for j in joints]
    landmarks = [
        Landmark(l["name"], l["joint"], np.asarray(l["offset"], dtype=np.float64))
        for l in data["landmarks"]
    ]
    skin = data["skinning"]
    if len(skin) != n_vertices:
        raise DataError(f"skinning rows ({len(skin)}) != mesh vertices ({n_vertices})")
    skin_idx = np.full((n_vertices, max_skin), -1, dtype=np.int64)
    skin_w = np.zeros((n_vertices, max_skin))
    for i, pairs in enumerate(skin):
        if len(pairs) > max_skin:
            raise DataError(f"vertex {i} has more than {max_skin} bone influences")
        for s, (b, w) in enumerate(pairs):
            skin_idx[i, s] = b
            skin_w[i, s] = w
    skin_idx[skin_idx < 0] = 0  # padded entries carry zero weight
    return Skeleton(
        joint_names=names,
        parents=parents,
        offsets=offsets,
        joint_axes=axes,
        limits=np.asarray(data["limits"], dtype=np.float64),
        landmarks=landmarks,
        skin_idx=skin_idx,
        skin_w=skin_w,
        eval_landmarks=data.get("eval_landmarks", list(range(len(landmarks)))),
        root_landmark=data.get("root_landmark", 0),
    )


def save_skeleton(path, skeleton_dict):
    with open(path, "w") as fh:
        json.dump(skeleton_dict, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# deformation graph
# ---------------------------------------------------------------------------

@dataclass
class DeformGraph:
    """Embedded deformation graph: K nodes sampled on the mesh surface.

    Vertex influences and node neighborhoods come from geodesic distances;
    the per-edge rigidity u is the mean of the per-vertex rigidity weights
    over all vertices influenced by either endpoint node.
    """

    node_positions: np.ndarray      # (K, 3)
    node_parent_vertex: np.ndarray  # (K,)
    vert_node_idx: np.ndarray       # (N, I)
    vert_node_w: np.ndarray         # (N, I)
    edge_src: np.ndarray            # (Ed,) directed k -> l, both directions present
    edge_dst: np.ndarray
    edge_u: np.ndarray              # (Ed,) u_{k,l} = u_{l,k} > 0
    node_skin: np.ndarray           # (K, J) dense bone weights, rows sum to 1
    landmark_nodes: np.ndarray      # (M,) bound node per landmark

    @property
    def node_count(self):
        return len(self.node_positions)

    def neighbors(self, k):
        return self.edge_dst[self.edge_src == k]

    def is_connected(self):
        K = self.node_count
        adj = sp.csr_matrix(
            (np.ones(len(self.edge_src)), (self.edge_src, self.edge_dst)), shape=(K, K)
        )
        ncomp, _ = connected_components(adj, directed=False)
        return ncomp == 1


def farthest_point_sample(adjacency, count, seed_vertex=0):
    """Geodesic farthest-point sampling; returns (indices (K,), dists (K, N)).

    Deterministic: starts at ``seed_vertex``, ties resolved by lowest index
    (np.argmax convention).
    """
    chosen = [seed_vertex]
    dists = geodesic_distances(adjacency, [seed_vertex])
    best = dists[0].copy()
    while len(chosen) < count:
        nxt = int(np.argmax(best))
        if not np.isfinite(best[nxt]):
            raise DataError("infinite geodesic distance: mesh disconnected")
        chosen.append(nxt)
        d = geodesic_distances(adjacency, [nxt])
        dists = np.concatenate([dists, d])
        best = np.minimum(best, d[0])
    return np.asarray(chosen, dtype=np.int64), dists


def build_graph(rig, node_count, influences_per_vertex=4, neighbors_per_node=8):
    """Construct the embedded deformation graph for a rig.

    Nodes are farthest-point samples under mesh geodesic distance. Vertex
    weights follow (1 - d/dmax)^2 over the nearest ``influences_per_vertex``
    nodes with dmax the distance to the next-nearest node; a vertex sitting
    exactly on a node (distance 0) binds rigidly to it.
    """
    mesh, skel = rig.mesh, rig.skeleton
    n = len(mesh.vertices)
    K, I = node_count, influences_per_vertex
    if K < neighbors_per_node + 1 or K < I + 1:
        raise DataError("node count too small for requested neighbors/influences")
    if K > n:
        raise DataError("node count exceeds vertex count")

    nodes, node_dists = farthest_point_sample(mesh.adjacency, K)  # (K,), (K, N)
    if not np.all(np.isfinite(node_dists)):
        raise DataError("infinite geodesic distance: mesh disconnected")

    # vertex influences
    vert_idx = np.zeros((n, I), dtype=np.int64)
    vert_w = np.zeros((n, I))
    dT = node_dists.T  # (N, K)
    for i in range(n):
        order = np.lexsort((np.arange(K), dT[i]))[: I + 1]
        d = dT[i][order]
        if d[0] == 0.0:
            vert_idx[i] = order[0]
            vert_w[i, 0] = 1.0
            continue
        dmax = d[I]
        if dmax < 1e-12:
            raise DataError(f"degenerate node spacing around vertex {i}")
        w = (1.0 - d[:I] / dmax) ** 2
        s = w.sum()
        if s <= 0:
            # all I nearest equidistant at dmax; fall back to uniform
            w = np.full(I, 1.0 / I)
            s = 1.0
        vert_idx[i] = order[:I]
        vert_w[i] = w / s

    # node neighborhoods (geodesic nearest nodes, symmetrized)
    node_node = node_dists[:, nodes]  # (K, K)
    pairs = set()
    for k in range(K):
        order = np.lexsort((np.arange(K), node_node[k]))
        picked = [l for l in order if l != k][:neighbors_per_node]
        for l in picked:
            pairs.add((min(k, int(l)), max(k, int(l))))
    pairs = sorted(pairs)

    # influence sets and per-edge rigidity
    infl = [set() for _ in range(K)]
    for i in range(n):
        for s in range(I):
            if vert_w[i, s] > 0:
                infl[vert_idx[i, s]].add(i)
    s_i = rig.rigidity_weights
    edge_src, edge_dst, edge_u = [], [], []
    for k, l in pairs:
        both = sorted(infl[k] | infl[l])
        u = float(np.mean(s_i[both])) if both else float(np.mean(s_i))
        if u <= 0:
            raise DataError(f"non-positive rigidity weight on edge ({k},{l})")
        edge_src += [k, l]
        edge_dst += [l, k]
        edge_u += [u, u]
    order = np.lexsort((edge_dst, edge_src))
    edge_src = np.asarray(edge_src, dtype=np.int64)[order]
    edge_dst = np.asarray(edge_dst, dtype=np.int64)[order]
    edge_u = np.asarray(edge_u)[order]

    # node skinning: influence-weighted average of vertex skinning
    n_joints = len(skel.joint_names)
    node_skin = np.zeros((K, n_joints))
    for i in range(n):
        for s in range(I):
            w = vert_w[i, s]
            if w <= 0:
                continue
            k = vert_idx[i, s]
            for b, bw in zip(skel.skin_idx[i], skel.skin_w[i]):
                if bw > 0:
                    node_skin[k, b] += w * bw
    sums = node_skin.sum(axis=1)
    if np.any(sums <= 0):
        raise DataError("node with no skinned influence")
    node_skin /= sums[:, None]

    # landmark binding: nearest mesh vertex, then its geodesically nearest node
    lm_nodes = np.zeros(skel.landmark_count, dtype=np.int64)
    for m, pos in enumerate(skel.landmark_rest):
        vtx = int(np.argmin(np.linalg.norm(mesh.vertices - pos, axis=1)))
        lm_nodes[m] = int(np.argmin(node_dists[:, vtx]))

    return DeformGraph(
        node_positions=mesh.vertices[nodes].copy(),
        node_parent_vertex=nodes,
        vert_node_idx=vert_idx,
        vert_node_w=vert_w,
        edge_src=edge_src,
        edge_dst=edge_dst,
        edge_u=edge_u,
        node_skin=node_skin,
        landmark_nodes=lm_nodes,
    )


# ---------------------------------------------------------------------------
# rig
# ---------------------------------------------------------------------------

@dataclass
class CharacterRig:
    """The trackable asset: mesh + skeleton + rigidity weights (+ graph)."""

    mesh: TemplateMesh
    skeleton: Skeleton
    rigidity_weights: np.ndarray  # (N,) s_i
    graph: DeformGraph = None

    def __post_init__(self):
        self._tensors = None

    def tensors(self):
        """Torch-side constants, built lazily (see kinematics/graphdeform)."""
        if self._tensors is None:
            from .rigtensors import RigTensors

            self._tensors = RigTensors(self)
        return self._tensors

    def invalidate(self):
        self._tensors = None


def load_character(mesh_file, skeleton_file, rigidity_map, rigidity_file=None):
    """Load and validate a character rig.

    ``rigidity_map`` maps integer class labels to per-vertex rigidity
    weights s_i. The sidecar defaults to ``<mesh stem>.rigidity.txt``.
    """
    mesh_file = Path(mesh_file)
    if rigidity_file is None:
        rigidity_file = mesh_file.with_suffix(".rigidity.txt")
    verts, faces = load_obj(mesh_file)
    classes = np.loadtxt(rigidity_file, dtype=np.int64, ndmin=1)
    mesh = TemplateMesh(verts, faces, classes)
    skel = load_skeleton(skeleton_file, len(verts))
    table = {int(k): float(v) for k, v in dict(rigidity_map).items()}
    missing = sorted(set(classes.tolist()) - set(table))
    if missing:
        raise DataError(f"rigidity classes {missing} missing from table")
    s = np.array([table[int(c)] for c in classes])
    if np.any(s <= 0):
        raise DataError("rigidity weights must be positive")
    return CharacterRig(mesh=mesh, skeleton=skel, rigidity_weights=s)


def load_rig_dir(rig_dir):
    """Load a rig directory: rig.json naming mesh/skeleton/rigidity + graph params."""
    rig_dir = Path(rig_dir)
    with open(rig_dir / "rig.json") as fh:
        meta = json.load(fh)
    rig = load_character(
        rig_dir / meta["mesh"],
        rig_dir / meta["skeleton"],
        meta["rigidity_map"],
        rigidity_file=rig_dir / meta["rigidity"],
    )
    g = meta.get("graph", {})
    rig.graph = build_graph(
        rig,
        g.get("nodes", 50),
        g.get("influences", 4),
        g.get("neighbors", 8),
    )
    return rig
