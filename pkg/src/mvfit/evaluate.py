"""End-to-end evaluation of fitted sequences against dataset ground truth.

Predictions and ground truth are reduced to world-space landmark
sequences; bones are rescaled to the ground-truth lengths before the
joint metrics, mirroring the usual evaluation protocol. The silhouette
family rasterizes the fitted meshes per view (optionally positioned with
the ground-truth translation to factor out localization error).
"""

import csv
from pathlib import Path

import numpy as np
import torch

from . import graphdeform, kinematics, metrics
from .errors import DataError


def landmark_world(rig, theta, alpha, t, camera):
    with torch.no_grad():
        P = kinematics.forward_landmarks(rig, theta, alpha)
        return kinematics.to_world(P, camera, t).numpy()


def load_pred_params(pred_dir, frames):
    from .dataio import load_params

    out = {}
    for f in frames:
        p = Path(pred_dir) / "params" / f"{f:04d}.txt"
        if p.exists():
            out[f] = load_params(p)
    if not out:
        raise DataError(f"{pred_dir}: no fitted parameter files found")
    return out


def evaluate(rig, dataset, pred_dir, input_view=None, use_gt_translation=True,
             per_frame=False):
    """All metrics for a fitted sequence; returns (summary, per-frame rows)."""
    skel = rig.skeleton
    cam_in = dataset.cameras[dataset.input_view if input_view is None else input_view]
    frames = dataset.frame_ids()
    preds = load_pred_params(pred_dir, frames)
    frames = [f for f in frames if f in preds]

    pred_lm, gt_lm = [], []
    pred_meshes, gt_masks = [], []
    statuses = []
    for f in frames:
        pp = preds[f]
        gp = dataset.load_gt(f)
        statuses.append(pp.get("status", "ok"))
        pred_lm.append(landmark_world(rig, pp["theta"], pp["alpha"], pp["t"], cam_in))
        gt_lm.append(landmark_world(rig, gp["theta"], gp["alpha"], gp["t"], cam_in))
        t_mesh = gp["t"] if use_gt_translation else pp["t"]
        mesh = graphdeform.mesh_state(rig, pp["theta"], pp["alpha"], t_mesh,
                                      pp["A"], pp["T"], cam_in)
        pred_meshes.append(mesh.V_world)
        gt_masks.append(dataset.gt_masks(f))
    pred_lm = np.stack(pred_lm)
    gt_lm = np.stack(gt_lm)

    parents = skel.landmark_parents()
    gt_lengths = metrics.bone_lengths(gt_lm[0], parents)
    pred_rs, _ = metrics.rescale_bones(pred_lm, parents, gt_lengths)

    root = skel.root_landmark
    mask = skel.eval_landmarks
    gle = metrics.gle(pred_rs[:, root], gt_lm[:, root])
    pred_al = metrics.root_align(pred_rs, root)[:, mask]
    gt_al = metrics.root_align(gt_lm, root)[:, mask]
    pck = metrics.pck3d(pred_al, gt_al)
    auc = metrics.auc(pred_al, gt_al)
    mpjpe = metrics.mpjpe_procrustes(pred_rs[:, mask], gt_lm[:, mask])

    iv = dataset.input_view if input_view is None else input_view
    iou = metrics.iou_family(pred_meshes, rig.mesh.faces, gt_masks,
                             dataset.cameras, iv)
    summary = {
        "frames": len(frames),
        "gle_mm": gle,
        "pck3d_pct": pck,
        "auc_pct": auc,
        "mpjpe_mm": mpjpe,
        "amviou_pct": iou["amviou"],
        "rviou_pct": iou["rviou"],
        "sviou_pct": iou["sviou"],
    }
    rows = []
    if per_frame:
        for i, f in enumerate(frames):
            err = np.linalg.norm(
                metrics.root_align(pred_rs[i : i + 1], root)[:, mask]
                - metrics.root_align(gt_lm[i : i + 1], root)[:, mask],
                axis=-1,
            )
            rows.append({
                "frame": f,
                "status": statuses[i],
                "pck3d_pct": float(100.0 * np.mean(err * 1000.0 < metrics.PCK_THRESHOLD_MM)),
                "mean_joint_err_mm": float(np.mean(err) * 1000.0),
                "amviou_pct": float(iou["per_view"][i].mean() * 100.0),
            })
    return summary, rows


def write_metrics_csv(path, summary, rows=None):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary.keys()))
        w.writeheader()
        w.writerow(summary)
    if rows:
        per = Path(path).with_name(Path(path).stem + "_frames.csv")
        with open(per, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            w.writeheader()
            w.writerows(rows)
