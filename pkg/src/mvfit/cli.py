"""Command-line interface: synth / fit / eval / export / gradcheck.

Exit codes: 0 ok, 2 bad arguments, 3 data error, 4 numerical failure.
"""

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

from .errors import DataError, NumericalError
from .fitter import FitConfig
from .losses import LossWeights


def _load_config_file(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc


def _build(dc_cls, overrides, where):
    import dataclasses

    known = {f.name for f in dataclasses.fields(dc_cls)}
    unknown = set(overrides) - known
    if unknown:
        raise BadArgs(f"unknown {where} config keys: {sorted(unknown)}")
    return dc_cls(**overrides)


class BadArgs(Exception):
    pass


def make_fit_config(doc, args=None):
    weights = _build(LossWeights, doc.get("weights", {}), "weights")
    fit_doc = dict(doc.get("fit", {}))
    fit_doc["weights"] = weights
    cfg = _build(FitConfig, fit_doc, "fit")
    if args is not None:
        if getattr(args, "input_view", None) is not None:
            cfg.input_view = args.input_view
        if getattr(args, "jobs", None):
            cfg.jobs = args.jobs
    return cfg


def make_synth_config(doc):
    from .synthgen import NodeScript, SynthConfig

    sdoc = dict(doc.get("synth", {}))
    scripts = [
        _build(NodeScript, dict(s), "deform_script") for s in sdoc.pop("deform_script", [])
    ]
    cfg = _build(SynthConfig, sdoc, "synth")
    cfg.deform_script = scripts
    return cfg


def _parse_frames(spec):
    if spec is None:
        return None
    if ".." in spec:
        a, b = spec.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in spec.split(",")]


def _parse_cameras(spec):
    if spec is None:
        return None
    if ".." in spec:
        a, b = spec.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(x) for x in spec.split(",")]


def cmd_synth(args):
    from . import synthgen
    from .assets import load_rig_dir

    doc = _load_config_file(args.config)
    cfg = make_synth_config(doc)
    rig = load_rig_dir(args.rig)
    t0 = time.time()
    synthgen.generate(rig, cfg, args.out)
    print(f"synth: wrote {cfg.frames} frames x {cfg.cameras} cameras to {args.out} "
          f"in {time.time() - t0:.1f}s", file=sys.stderr)
    return 0


def cmd_fit(args):
    from . import dataio
    from .assets import load_rig_dir
    from .fitter import fit_sequence

    torch.set_num_threads(1)  # keeps small-tensor runs deterministic and fast
    doc = _load_config_file(args.config)
    cfg = make_fit_config(doc, args)
    rig = load_rig_dir(args.rig)
    dataset = dataio.Dataset(args.dataset)
    cam_subset = _parse_cameras(args.cameras)
    if cam_subset is not None:
        dataset = _camera_subset_view(dataset, cam_subset)
        if cfg.input_view not in range(len(dataset.cameras)):
            raise DataError("input view outside the camera subset")
    frames = _parse_frames(args.frames)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "params").mkdir(exist_ok=True)
    t0 = time.time()
    result = fit_sequence(rig, dataset, cfg, frames=frames)
    elapsed = time.time() - t0
    n_fail = 0
    for r in result.frames:
        extra = {"status": r.status,
                 "final_loss": {k: (tr[-1]["total"] if tr else None)
                                for k, tr in r.trace.items()}}
        dataio.save_params(out / "params" / f"{r.frame:04d}.txt",
                           r.pose.theta, r.pose.alpha, r.pose.t,
                           r.graph.A, r.graph.T, extra=extra)
        n_fail += r.status != "ok"
    cfg_doc = {"fit": _jsonable(asdict(cfg)), "cameras": cam_subset,
               "frames": frames}
    dataio.write_manifest(out, "fit", cfg_doc, cfg.seed,
                          assets=[args.rig, args.dataset],
                          timings={"total_s": elapsed})
    print(f"fit: {len(result.frames) - n_fail}/{len(result.frames)} frames ok "
          f"in {elapsed:.1f}s -> {out}", file=sys.stderr)
    return 0 if n_fail == 0 else 4


def _jsonable(doc):
    out = {}
    for k, v in doc.items():
        if isinstance(v, dict):
            out[k] = _jsonable(v)
        elif callable(v):
            out[k] = getattr(v, "__name__", "callable")
        elif isinstance(v, (np.floating, np.integer)):
            out[k] = v.item()
        else:
            out[k] = v
    return out


def _camera_subset_view(dataset, cam_subset):
    """A dataset view restricted to a subset of supervision cameras."""
    import copy

    from .dataio import FrameObservations

    sub = copy.copy(dataset)
    for c in cam_subset:
        if c not in range(len(dataset.cameras)):
            raise DataError(f"camera {c} not in dataset")
    sub.cameras = [dataset.cameras[c] for c in cam_subset]
    base_load = dataset.load_frame

    def load_frame(frame, with_sils=True):
        obs = base_load(frame, with_sils)
        return FrameObservations(
            keypoints=obs.keypoints[cam_subset],
            sigma=obs.sigma[cam_subset],
            sils=[obs.sils[c] for c in cam_subset],
        )

    sub.load_frame = load_frame
    return sub


def cmd_eval(args):
    from . import dataio
    from .assets import load_rig_dir
    from .evaluate import evaluate, write_metrics_csv

    rig = load_rig_dir(args.rig)
    dataset = dataio.Dataset(args.gt)
    summary, rows = evaluate(rig, dataset, args.pred,
                             input_view=args.input_view,
                             use_gt_translation=not args.own_translation,
                             per_frame=args.per_frame)
    out = Path(args.out) if args.out else Path(args.pred) / "metrics.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out, summary, rows)
    print(",".join(summary.keys()))
    print(",".join(f"{v:.4f}" if isinstance(v, float) else str(v)
                   for v in summary.values()))
    return 0


def cmd_export(args):
    from . import dataio
    from .assets import load_rig_dir
    from .dataio import Dataset, export_obj_sequence, load_params
    from .fitter import smooth_sequence
    from .graphdeform import mesh_state

    rig = load_rig_dir(args.rig)
    dataset = Dataset(args.dataset)
    cam_in = dataset.cameras[dataset.input_view]
    pred = Path(args.pred)
    frames = sorted(int(p.stem) for p in (pred / "params").glob("*.txt"))
    if not frames:
        raise DataError(f"{pred}: no parameter files")
    meshes = []
    for f in frames:
        doc = load_params(pred / "params" / f"{f:04d}.txt")
        meshes.append(mesh_state(rig, doc["theta"], doc["alpha"], doc["t"],
                                 doc["A"], doc["T"], cam_in))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_obj_sequence(out, [m.V_world for m in meshes], rig.mesh.faces, "meshes")
    smoothed = smooth_sequence(meshes, args.kernel, args.sigma)
    export_obj_sequence(out, [m.V_world for m in smoothed], rig.mesh.faces, "smoothed")
    dataio.write_manifest(out, "export", {"kernel": args.kernel, "sigma": args.sigma},
                          seed=0, assets=[args.rig, args.pred])
    print(f"export: {len(frames)} frames -> {out}", file=sys.stderr)
    return 0


def cmd_gradcheck(args):
    from .assets import load_rig_dir
    from .grad import run_gradcheck

    torch.set_num_threads(1)
    rig = load_rig_dir(args.rig)
    ok, report = run_gradcheck(rig, seed=args.seed, n_configs=args.configs,
                               tol=args.tol, verbose=args.verbose)
    worst = 0.0
    for row in report["rows"]:
        worst = max(worst, *[v for k, v in row.items() if k != "config"])
    print(f"gradcheck: {len(report['rows'])} configs, worst relative error "
          f"{worst:.3e} (tol {report['tol']:.0e}), {report['elapsed_s']:.1f}s")
    return 0 if ok else 4


def build_parser():
    p = argparse.ArgumentParser(prog="mvfit", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic multi-view dataset")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--rig", required=True, help="rig directory")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    f = sub.add_parser("fit", help="fit pose + deformation per frame")
    f.add_argument("--dataset", required=True)
    f.add_argument("--rig", required=True)
    f.add_argument("--config", help="JSON config file")
    f.add_argument("--out", required=True)
    f.add_argument("--cameras", help="supervision subset, e.g. 0..3 or 0,2,4")
    f.add_argument("--frames", help="frame subset, e.g. 0..9 or 0,5")
    f.add_argument("--input-view", type=int, default=None)
    f.add_argument("--jobs", type=int, default=None)
    f.set_defaults(fn=cmd_fit)

    e = sub.add_parser("eval", help="evaluate fitted parameters against GT")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True, help="dataset directory")
    e.add_argument("--rig", required=True)
    e.add_argument("--input-view", type=int, default=None)
    e.add_argument("--own-translation", action="store_true",
                   help="use the fitted translation for IoU instead of GT")
    e.add_argument("--per-frame", action="store_true")
    e.add_argument("--out", help="metrics CSV path")
    e.set_defaults(fn=cmd_eval)

    x = sub.add_parser("export", help="write OBJ meshes (+ smoothed variant)")
    x.add_argument("--pred", required=True)
    x.add_argument("--dataset", required=True)
    x.add_argument("--rig", required=True)
    x.add_argument("--out", required=True)
    x.add_argument("--kernel", type=int, default=5)
    x.add_argument("--sigma", type=float, default=1.0)
    x.set_defaults(fn=cmd_export)

    g = sub.add_parser("gradcheck", help="finite-difference check of both objectives")
    g.add_argument("--rig", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--configs", type=int, default=20)
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--verbose", action="store_true")
    g.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.fn(args)
    except BadArgs as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
