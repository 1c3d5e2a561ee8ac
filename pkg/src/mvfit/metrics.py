"""Evaluation metrics: localization, pose accuracy, and silhouette overlap.

Joint sequences are (F, J, 3) arrays in meters; reported errors are in
millimeters and percentages. The silhouette family rasterizes the fitted
meshes and compares against the stored ground-truth masks per view.
"""

import numpy as np

from .errors import DataError
from .raster import rasterize_mask

MM = 1000.0
PCK_THRESHOLD_MM = 150.0
AUC_GRID_MM = np.arange(0.0, 151.0, 5.0)


def rescale_bones(pred, parents, gt_lengths):
    """Re-pose joints so every bone matches the ground-truth length.

    Directions are kept and lengths propagate root-outward. A zero-length
    predicted bone inherits its parent bone's direction (flagged).
    Returns (rescaled (F, J, 3), flags (F, J) bool).
    """
    pred = np.asarray(pred, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.int64)
    gt_lengths = np.asarray(gt_lengths, dtype=np.float64)
    F, J, _ = pred.shape
    out = pred.copy()
    flags = np.zeros((F, J), dtype=bool)
    order = np.argsort(_depths(parents), kind="stable")
    for f in range(F):
        for j in order:
            p = parents[j]
            if p < 0:
                continue
            d = pred[f, j] - pred[f, p]
            n = np.linalg.norm(d)
            if n < 1e-12:
                flags[f, j] = True
                gp = parents[p]
                ref = out[f, p] - out[f, gp] if gp >= 0 else np.array([0.0, 1.0, 0.0])
                rn = np.linalg.norm(ref)
                d = ref / rn if rn > 1e-12 else np.array([0.0, 1.0, 0.0])
            else:
                d = d / n
            out[f, j] = out[f, p] + gt_lengths[j] * d
    return out, flags


def bone_lengths(joints, parents):
    """Per-joint bone length to the parent (root entry 0); (..., J)."""
    joints = np.asarray(joints, dtype=np.float64)
    parents = np.asarray(parents, dtype=np.int64)
    lengths = np.zeros(joints.shape[:-1])
    for j, p in enumerate(parents):
        if p >= 0:
            lengths[..., j] = np.linalg.norm(joints[..., j, :] - joints[..., p, :], axis=-1)
    return lengths


def _depths(parents):
    d = np.zeros(len(parents), dtype=np.int64)
    for j, p in enumerate(parents):
        if p >= 0:
            d[j] = d[p] + 1
    return d


def gle(pred_root, gt_root):
    """Global localization error: mean root position error in mm."""
    pred_root = np.asarray(pred_root, dtype=np.float64)
    gt_root = np.asarray(gt_root, dtype=np.float64)
    _check_frames(pred_root, gt_root)
    return float(np.mean(np.linalg.norm(pred_root - gt_root, axis=-1)) * MM)


def root_align(seq, root_index):
    seq = np.asarray(seq, dtype=np.float64)
    return seq - seq[:, root_index : root_index + 1, :]


def pck3d(pred, gt, threshold_mm=PCK_THRESHOLD_MM):
    """Percentage of (frame, joint) pairs within the threshold; inputs aligned."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_frames(pred, gt)
    err = np.linalg.norm(pred - gt, axis=-1) * MM
    return float(100.0 * np.mean(err < threshold_mm))


def auc(pred, gt, thresholds_mm=AUC_GRID_MM):
    """Mean PCK over the threshold grid (percent)."""
    return float(np.mean([pck3d(pred, gt, th) for th in thresholds_mm]))


def umeyama(X, Y):
    """Similarity transform (s, R, t) minimizing ||s R X + t - Y||^2."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    cov = Yc.T @ Xc / len(X)
    U, S, Vt = np.linalg.svd(cov)
    d = np.ones(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        d[-1] = -1.0
    R = U @ np.diag(d) @ Vt
    var = (Xc**2).sum() / len(X)
    if var < 1e-18:
        raise DataError("degenerate point set for similarity alignment")
    s = (S * d).sum() / var
    t = my - s * R @ mx
    return s, R, t


def mpjpe_procrustes(pred, gt):
    """Mean per-joint error (mm) after per-frame similarity alignment."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _check_frames(pred, gt)
    errs = []
    for f in range(pred.shape[0]):
        s, R, t = umeyama(pred[f], gt[f])
        aligned = (s * (R @ pred[f].T)).T + t
        errs.append(np.linalg.norm(aligned - gt[f], axis=-1).mean())
    return float(np.mean(errs) * MM)


def mask_iou(a, b):
    """IoU of two binary masks; both-empty counts as 1, one-empty as 0."""
    a = np.asarray(a) > 0
    b = np.asarray(b) > 0
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return float(np.count_nonzero(a & b) / union)


def iou_family(meshes_world, faces, gt_masks, cameras, input_view):
    """AMVIoU / RVIoU / SVIoU over all frames (percent).

    ``meshes_world``: per frame (N, 3) world vertices.
    ``gt_masks``: per frame, per camera binary masks.
    Means are over (frame, view) pairs, so the decomposition
    AMVIoU = (RVIoU (C-1) + SVIoU) / C holds exactly.
    """
    C = len(cameras)
    per_view = np.zeros((len(meshes_world), C))
    for f, V in enumerate(meshes_world):
        for c, cam in enumerate(cameras):
            pred = rasterize_mask(cam, V, faces)
            per_view[f, c] = mask_iou(pred, gt_masks[f][c])
    all_views = float(per_view.mean() * 100.0)
    ref = [c for c in range(C) if c != input_view]
    rv = float(per_view[:, ref].mean() * 100.0) if ref else float("nan")
    sv = float(per_view[:, input_view].mean() * 100.0)
    return {"amviou": all_views, "rviou": rv, "sviou": sv, "per_view": per_view}


def _check_frames(a, b):
    if a.shape != b.shape:
        raise DataError(f"sequence shape mismatch: {a.shape} vs {b.shape}")
