"""Dataset and result directory layouts.

Dataset (written by synthgen, read by the fitter):
    cameras.json
    manifest.json
    frames/NNNN/kp_CC.txt      per camera: M rows "x y sigma"
    frames/NNNN/mask_CC.pgm    binary P5
    frames/NNNN/dt_CC.bin      f32 distance raster, 16-byte header
    gt/NNNN.txt                JSON ground-truth parameters

Fit output:
    manifest.json
    params/NNNN.txt            JSON fitted parameters + per-stage summaries
"""

import hashlib
import json
import platform
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .camera import load_cameras, save_cameras
from .dtransform import load_silhouette, save_dt, save_pgm
from .errors import DataError


@dataclass
class FrameObservations:
    """Per-frame multi-view observations: detections and silhouettes."""

    keypoints: np.ndarray  # (C, M, 2) px
    sigma: np.ndarray      # (C, M) confidences
    sils: list             # per camera SilhouetteObservation (may be None)


def frame_dir(root, frame):
    return Path(root) / "frames" / f"{frame:04d}"


def save_keypoints(path, kp, sigma):
    with open(path, "w") as fh:
        for (x, y), s in zip(np.asarray(kp, dtype=np.float64), np.asarray(sigma, dtype=np.float64)):
            fh.write(f"{float(x)!r} {float(y)!r} {float(s)!r}\n")


def load_keypoints(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if parts:
                rows.append([float(p) for p in parts])
    arr = np.asarray(rows, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError(f"{path}: expected rows of 'x y sigma'")
    return arr[:, :2], arr[:, 2]


def _params_to_json(theta, alpha, t, A, T, extra=None):
    doc = {
        "theta": np.asarray(theta, dtype=np.float64).tolist(),
        "alpha": np.asarray(alpha, dtype=np.float64).tolist(),
        "t": np.asarray(t, dtype=np.float64).tolist(),
        "A": np.asarray(A, dtype=np.float64).tolist(),
        "T": np.asarray(T, dtype=np.float64).tolist(),
    }
    if extra:
        doc.update(extra)
    return doc


def save_params(path, theta, alpha, t, A, T, extra=None):
    with open(path, "w") as fh:
        json.dump(_params_to_json(theta, alpha, t, A, T, extra), fh, sort_keys=True)


def load_params(path):
    with open(path) as fh:
        doc = json.load(fh)
    for key in ("theta", "alpha", "t", "A", "T"):
        if key not in doc:
            raise DataError(f"{path}: missing field {key!r}")
        doc[key] = np.asarray(doc[key], dtype=np.float64)
    return doc


def write_manifest(out_dir, command, config_doc, seed, assets=(), timings=None,
                   extra=None, deterministic=False):
    """Run manifest: config hash, seed, asset paths, versions, timings.

    ``deterministic`` drops the wall-clock fields so identical runs write
    identical bytes.
    """
    canon = json.dumps(config_doc, sort_keys=True)
    doc = {
        "command": command,
        "config": config_doc,
        "config_hash": hashlib.sha256(canon.encode()).hexdigest(),
        "seed": seed,
        "assets": [str(a) for a in assets],
        "versions": {
            "mvfit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if not deterministic:
        doc["timings_s"] = timings or {}
        doc["written_at"] = time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime())
    if extra:
        doc.update(extra)
    with open(Path(out_dir) / "manifest.json", "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
    return doc


class Dataset:
    """A generated dataset directory (observations + ground truth)."""

    def __init__(self, root):
        self.root = Path(root)
        if not (self.root / "cameras.json").exists():
            raise DataError(f"{root}: not a dataset (no cameras.json)")
        self.cameras = load_cameras(self.root / "cameras.json")
        with open(self.root / "manifest.json") as fh:
            self.manifest = json.load(fh)
        self.input_view = int(self.manifest.get("input_view", 0))

    def frame_ids(self):
        frames = sorted((self.root / "frames").glob("[0-9]" * 4))
        return [int(p.name) for p in frames]

    def load_frame(self, frame, with_sils=True):
        d = frame_dir(self.root, frame)
        if not d.is_dir():
            raise DataError(f"missing frame directory {d}")
        kps, sigmas, sils = [], [], []
        for c in range(len(self.cameras)):
            kp, s = load_keypoints(d / f"kp_{c:02d}.txt")
            kps.append(kp)
            sigmas.append(s)
            if with_sils:
                sils.append(load_silhouette(d / f"mask_{c:02d}.pgm", d / f"dt_{c:02d}.bin"))
            else:
                sils.append(None)
        return FrameObservations(
            keypoints=np.stack(kps), sigma=np.stack(sigmas), sils=sils
        )

    def load_gt(self, frame):
        return load_params(self.root / "gt" / f"{frame:04d}.txt")

    def gt_masks(self, frame):
        d = frame_dir(self.root, frame)
        from .dtransform import load_pgm

        return [load_pgm(d / f"mask_{c:02d}.pgm") for c in range(len(self.cameras))]


def write_frame(root, frame, cameras, keypoints, sigma, masks, dts):
    d = frame_dir(root, frame)
    d.mkdir(parents=True, exist_ok=True)
    for c in range(len(cameras)):
        save_keypoints(d / f"kp_{c:02d}.txt", keypoints[c], sigma[c])
        save_pgm(d / f"mask_{c:02d}.pgm", masks[c])
        save_dt(d / f"dt_{c:02d}.bin", dts[c])


def write_gt(root, frame, theta, alpha, t, A, T):
    gt = Path(root) / "gt"
    gt.mkdir(parents=True, exist_ok=True)
    save_params(gt / f"{frame:04d}.txt", theta, alpha, t, A, T)


def export_obj_sequence(out_dir, meshes, faces, subdir="meshes"):
    from .assets import save_obj

    out = Path(out_dir) / subdir
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(meshes):
        save_obj(out / f"{i:04d}.obj", m, faces)
    return out
