"""Procedural capsule-person test asset.

Builds a single connected, watertight humanoid surface by running marching
cubes over a union-of-capsules signed distance field, rigs it to a
27-DoF skeleton with 21 landmarks (17 body + 4 face), derives smooth
capsule-distance skinning weights, and labels rigidity classes
(skin / torso cloth / leg cloth). ``write_capsule_asset`` emits the
on-disk rig directory consumed by the CLI.
"""

import json
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components
from skimage.measure import marching_cubes

from . import assets
from .errors import DataError

# rigidity classes
SKIN, TORSO_CLOTH, LEG_CLOTH = 0, 1, 2
RIGIDITY_MAP = {SKIN: 1.0, TORSO_CLOTH: 0.5, LEG_CLOTH: 0.7}


def skeleton_spec():
    """Joint table: (name, parent, offset, axes). 27 rotational DoF total."""
    return [
        ("pelvis",     -1, (0.0, 0.0, 0.0), ""),
        ("spine",       0, (0.0, 0.12, 0.0), "xyz"),
        ("chest",       1, (0.0, 0.18, 0.0), ""),
        ("neck",        2, (0.0, 0.15, 0.0), "xyz"),
        ("head",        3, (0.0, 0.08, 0.0), "x"),
        ("l_shoulder",  2, (0.18, 0.10, 0.0), "xyz"),
        ("l_elbow",     5, (0.26, 0.0, 0.0), "z"),
        ("l_wrist",     6, (0.25, 0.0, 0.0), "z"),
        ("r_shoulder",  2, (-0.18, 0.10, 0.0), "xyz"),
        ("r_elbow",     8, (-0.26, 0.0, 0.0), "z"),
        ("r_wrist",     9, (-0.25, 0.0, 0.0), "z"),
        ("l_hip",       0, (0.10, -0.05, 0.0), "xyz"),
        ("l_knee",     11, (0.0, -0.40, 0.0), "x"),
        ("l_ankle",    12, (0.0, -0.40, 0.0), "x"),
        ("r_hip",       0, (-0.10, -0.05, 0.0), "xyz"),
        ("r_knee",     14, (0.0, -0.40, 0.0), "x"),
        ("r_ankle",    15, (0.0, -0.40, 0.0), "x"),
    ]


def dof_limits():
    """Per-DoF [min, max] in radians, in skeleton DoF order."""
    lim = {
        "spine": [(-0.4, 0.4), (-0.5, 0.5), (-0.4, 0.4)],
        "neck": [(-0.5, 0.5), (-0.5, 0.5), (-0.5, 0.5)],
        "head": [(-0.5, 0.5)],
        "l_shoulder": [(-1.2, 1.2), (-1.0, 1.0), (-1.2, 1.2)],
        "l_elbow": [(0.0, 2.2)],
        "l_wrist": [(-0.6, 0.6)],
        "r_shoulder": [(-1.2, 1.2), (-1.0, 1.0), (-1.2, 1.2)],
        "r_elbow": [(-2.2, 0.0)],
        "r_wrist": [(-0.6, 0.6)],
        "l_hip": [(-1.2, 0.5), (-0.6, 0.6), (-0.8, 0.8)],
        "l_knee": [(0.0, 2.2)],
        "l_ankle": [(-0.5, 0.7)],
        "r_hip": [(-1.2, 0.5), (-0.6, 0.6), (-0.8, 0.8)],
        "r_knee": [(0.0, 2.2)],
        "r_ankle": [(-0.5, 0.7)],
    }
    out = []
    for name, _, _, axes in skeleton_spec():
        if axes:
            out.extend(lim[name])
    return out


def landmark_spec():
    """17 body landmarks (one per joint) + 4 face landmarks on the head."""
    body = [(name, j, (0.0, 0.0, 0.0)) for j, (name, *_rest) in enumerate(skeleton_spec())]
    face = [
        ("nose", 4, (0.0, 0.07, 0.10)),
        ("chin", 4, (0.0, 0.01, 0.10)),
        ("l_eye", 4, (0.035, 0.10, 0.085)),
        ("r_eye", 4, (-0.035, 0.10, 0.085)),
    ]
    return body + face


# the 14 commonly evaluated joints: head, neck, shoulders, elbows, wrists,
# hips, knees, ankles (landmark index == joint index for body landmarks)
EVAL_LANDMARKS = [4, 3, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]
ROOT_LANDMARK = 0


def _rest_joints():
    spec = skeleton_spec()
    pos = np.zeros((len(spec), 3))
    for j, (_, parent, offset, _) in enumerate(spec):
        pos[j] = (pos[parent] if parent >= 0 else 0.0) + np.asarray(offset)
    return pos


def _capsules():
    """(a, b, radius, bone, rigidity class) for SDF, skinning, and labeling."""
    J = _rest_joints()
    caps = [
        (J[0], J[1], 0.130, 0, TORSO_CLOTH),
        (J[1], J[2], 0.130, 1, TORSO_CLOTH),
        (J[2], J[3], 0.120, 2, TORSO_CLOTH),
        (J[2], J[5], 0.055, 2, TORSO_CLOTH),   # left clavicle
        (J[2], J[8], 0.055, 2, TORSO_CLOTH),   # right clavicle
        (J[3], J[4], 0.060, 3, SKIN),
        (J[4], J[4] + [0.0, 0.16, 0.0], 0.095, 4, SKIN),
        (J[5], J[6], 0.055, 5, SKIN),
        (J[6], J[7], 0.050, 6, SKIN),
        (J[7], J[7] + [0.10, 0.0, 0.0], 0.050, 7, SKIN),
        (J[8], J[9], 0.055, 8, SKIN),
        (J[9], J[10], 0.050, 9, SKIN),
        (J[10], J[10] + [-0.10, 0.0, 0.0], 0.050, 10, SKIN),
        (J[11], J[12], 0.075, 11, LEG_CLOTH),
        (J[12], J[13], 0.065, 12, LEG_CLOTH),
        (J[13], J[13] + [0.0, -0.05, 0.11], 0.050, 13, LEG_CLOTH),
        (J[14], J[15], 0.075, 14, LEG_CLOTH),
        (J[15], J[16], 0.065, 15, LEG_CLOTH),
        (J[16], J[16] + [0.0, -0.05, 0.11], 0.050, 16, LEG_CLOTH),
    ]
    return [(np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64), r, bone, cls)
            for a, b, r, bone, cls in caps]


def _segment_distance(points, a, b):
    """Distance from points (n, 3) to segment a-b."""
    ab = b - a
    denom = float(ab @ ab)
    if denom < 1e-18:
        return np.linalg.norm(points - a, axis=1)
    t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(points - closest, axis=1)


def build_capsule_mesh(grid=0.034):
    """Marching-cubes surface of the capsule union.

    Returns (vertices, faces, rigidity_class) with faces oriented outward
    and only the largest connected component kept.
    """
    caps = _capsules()
    lo = np.array([-0.95, -1.00, -0.38])
    hi = np.array([0.95, 0.90, 0.38])
    nx, ny, nz = [int(np.ceil((hi[i] - lo[i]) / grid)) + 1 for i in range(3)]
    xs = lo[0] + grid * np.arange(nx)
    ys = lo[1] + grid * np.arange(ny)
    zs = lo[2] + grid * np.arange(nz)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    sdf = np.full(len(pts), np.inf)
    for a, b, r, _, _ in caps:
        sdf = np.minimum(sdf, _segment_distance(pts, a, b) - r)
    vol = sdf.reshape(nx, ny, nz)
    verts, faces, _, _ = marching_cubes(vol, level=0.0, spacing=(grid, grid, grid))
    verts = verts + lo

    verts, faces = _largest_component(verts, faces)
    faces = _orient_outward(verts, faces, caps)
    cls = _classify(verts, caps)
    return verts, faces, cls


def _largest_component(verts, faces):
    import scipy.sparse as sp

    n = len(verts)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    adj = sp.csr_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    ncomp, labels = connected_components(adj, directed=False)
    if ncomp > 1:
        keep = np.argmax(np.bincount(labels))
        vmask = labels == keep
        remap = -np.ones(n, dtype=np.int64)
        remap[vmask] = np.arange(vmask.sum())
        fmask = vmask[faces].all(axis=1)
        verts = verts[vmask]
        faces = remap[faces[fmask]]
    return verts, faces


def _orient_outward(verts, faces, caps):
    centroids = verts[faces].mean(axis=1)
    inner = np.full(len(centroids), np.inf)
    ref = np.zeros_like(centroids)
    for a, b, r, _, _ in caps:
        d = _segment_distance(centroids, a, b)
        closer = d < inner
        inner[closer] = d[closer]
        ab = b - a
        denom = max(float(ab @ ab), 1e-18)
        t = np.clip((centroids[closer] - a) @ ab / denom, 0.0, 1.0)
        ref[closer] = centroids[closer] - (a + t[:, None] * ab)
    fn = np.cross(verts[faces[:, 1]] - verts[faces[:, 0]],
                  verts[faces[:, 2]] - verts[faces[:, 0]])
    agree = (fn * ref).sum(axis=1) > 0
    if np.count_nonzero(agree) * 2 < len(faces):
        faces = faces[:, [0, 2, 1]]
    return faces


def _classify(verts, caps):
    best = np.full(len(verts), np.inf)
    cls = np.zeros(len(verts), dtype=np.int64)
    for a, b, r, _, c in caps:
        d = _segment_distance(verts, a, b) - r
        closer = d < best
        best[closer] = d[closer]
        cls[closer] = c
    return cls


def _skinning(verts, caps, n_joints, max_influences=4, spread=1.6, power=4.0):
    """Smooth capsule-distance skinning: nearby bones share, midspans are rigid."""
    nd = np.full((len(verts), n_joints), np.inf)
    for a, b, r, bone, _ in caps:
        d = _segment_distance(verts, a, b) / r
        nd[:, bone] = np.minimum(nd[:, bone], d)
    pairs = []
    for i in range(len(verts)):
        order = np.argsort(nd[i], kind="stable")[:max_influences]
        d0 = nd[i, order[0]]
        keep = [int(b) for b in order if nd[i, b] <= spread * d0 + 1e-12]
        w = np.array([(1.0 / max(nd[i, b], 1e-6)) ** power for b in keep])
        w /= w.sum()
        pairs.append([[b, float(wi)] for b, wi in zip(keep, w)])
    return pairs


def build_skeleton_dict(verts):
    spec = skeleton_spec()
    caps = _capsules()
    return {
        "joints": [
            {"name": n, "parent": p, "offset": list(o), "axes": a}
            for n, p, o, a in spec
        ],
        "limits": [list(l) for l in dof_limits()],
        "landmarks": [
            {"name": n, "joint": j, "offset": list(o)} for n, j, o in landmark_spec()
        ],
        "skinning": _skinning(np.asarray(verts), caps, len(spec)),
        "eval_landmarks": EVAL_LANDMARKS,
        "root_landmark": ROOT_LANDMARK,
    }


def capsule_rig(nodes=50, influences=4, neighbors=8, grid=0.034):
    """In-memory capsule-person rig with a built deformation graph."""
    verts, faces, cls = build_capsule_mesh(grid)
    mesh = assets.TemplateMesh(verts, faces, cls)
    skel = assets.skeleton_from_dict(build_skeleton_dict(verts), len(verts))
    s = np.array([RIGIDITY_MAP[int(c)] for c in cls])
    rig = assets.CharacterRig(mesh=mesh, skeleton=skel, rigidity_weights=s)
    rig.graph = assets.build_graph(rig, nodes, influences, neighbors)
    return rig


def write_capsule_asset(out_dir, nodes=50, influences=4, neighbors=8, grid=0.034):
    """Write the rig directory: mesh.obj, sidecar, skeleton.json, rig.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verts, faces, cls = build_capsule_mesh(grid)
    assets.save_obj(out / "mesh.obj", verts, faces)
    np.savetxt(out / "mesh.rigidity.txt", cls, fmt="%d")
    with open(out / "skeleton.json", "w") as fh:
        json.dump(build_skeleton_dict(verts), fh, sort_keys=True)
    meta = {
        "mesh": "mesh.obj",
        "skeleton": "skeleton.json",
        "rigidity": "mesh.rigidity.txt",
        "rigidity_map": {str(k): v for k, v in RIGIDITY_MAP.items()},
        "graph": {"nodes": nodes, "influences": influences, "neighbors": neighbors},
    }
    with open(out / "rig.json", "w") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)
    return out
