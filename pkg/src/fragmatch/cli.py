"""``fragmatch`` command line: one subcommand per pipeline stage plus ``pipeline``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .alignment import AlignmentFailure, read_transform, write_transform
from .gmd import read_gmd_bin, write_gmd_bin
from .keypoints import write_keypoints_csv
from .matching import read_correspondences_csv, write_correspondences_csv
from .metrics import write_report_csv, write_report_json
from .pipeline import (
    EXIT_ACCEPTED,
    EXIT_ERROR,
    EXIT_REJECTED,
    PipelineError,
    RunConfig,
    _load,
    align_surfaces,
    evaluate_alignment,
    load_config,
    match_surfaces,
    prepare_surface,
    run_pipeline,
)
from .ply import save_ply
from .pointcloud import compute_resolution
from .synth import (
    SynthConfig,
    add_gaussian_noise,
    apply_abrasion,
    downsample,
    generate_fragment_pair,
    write_ground_truth,
)


def _add_config_flags(p):
    p.add_argument("--config", help="key = value file; flags override it")
    p.add_argument("--out-dir", default=".", help="output directory (default: current)")
    p.add_argument("--report-format", choices=("json", "csv"), default="json")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        kind = int if f.type in ("int", int) else float
        p.add_argument(flag, dest=f.name, type=kind, default=None)


def _config(args) -> RunConfig:
    base = load_config(args.config) if args.config else RunConfig()
    return base.updated(**{f.name: getattr(args, f.name) for f in fields(RunConfig)})


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_report(out, report, fmt):
    if fmt == "csv":
        write_report_csv(out / "report.csv", report)
    else:
        write_report_json(out / "report.json", report)


def cmd_describe(args):
    cfg, out = _config(args), _out(args)
    feat = prepare_surface(args.cloud, cfg)
    stem = Path(args.cloud).stem
    write_gmd_bin(out / f"{stem}.gmd.bin", feat.descriptors)
    write_keypoints_csv(out / f"{stem}.keypoints.csv", feat.cloud, feat.keypoints)
    print(f"{stem}: {len(feat.keypoints)} keypoints, {len(feat.descriptors)} descriptors, "
          f"{len(feat.skipped)} skipped")
    return EXIT_ACCEPTED


def _descriptors(path, cfg):
    if str(path).endswith(".bin"):
        return read_gmd_bin(path)
    return prepare_surface(path, cfg).descriptors


def cmd_match(args):
    cfg, out = _config(args), _out(args)
    dec = match_surfaces(_descriptors(args.src, cfg), _descriptors(args.dst, cfg), cfg)
    write_correspondences_csv(out / "correspondences.csv", dec.correspondences)
    verdict = "accepted" if dec.accepted else "rejected"
    print(f"{verdict}: {len(dec.correspondences)} correspondences, mean distance "
          f"{dec.aggregate_distance:.6g}, psi {dec.psi:.6g}")
    return EXIT_ACCEPTED if dec.accepted else EXIT_REJECTED


def cmd_align(args):
    cfg, out = _config(args), _out(args)
    src, dst = _load(args.src), _load(args.dst)
    corrs = read_correspondences_csv(args.correspondences)
    r = 0.5 * (compute_resolution(src) + compute_resolution(dst))
    try:
        res = align_surfaces(corrs, src, dst, r, cfg)
    except AlignmentFailure as exc:
        raise PipelineError("align", str(exc)) from None
    write_transform(out / "transform.txt", res.transform)
    print(f"{len(res.inlier_indices)} RANSAC inliers, ICP error {res.icp_final_error:.6g} "
          f"after {res.iterations_used} iterations")
    return EXIT_ACCEPTED


def cmd_evaluate(args):
    cfg, out = _config(args), _out(args)
    t = read_transform(args.transform)
    dst = prepare_surface(args.dst, cfg) if args.keypoints is None else None
    src = _load(args.src)
    dst_cloud = dst.cloud if dst is not None else _load(args.dst)
    kps = dst.keypoints if dst is not None else np.loadtxt(args.keypoints, delimiter=",",
                                                          skiprows=1, usecols=0, dtype=np.intp,
                                                          ndmin=1)
    corrs = read_correspondences_csv(args.correspondences) if args.correspondences else ()
    r = 0.5 * (compute_resolution(src) + compute_resolution(dst_cloud))
    try:
        report = evaluate_alignment(src, dst_cloud, t, kps, r, cfg, corrs)
    except ValueError as exc:
        raise PipelineError("metrics", str(exc)) from None
    _write_report(out, report, args.report_format)
    print(f"PoC {report.poc:.2f}%  AoNV {report.aonv:.3f}  localAoNV {report.local_aonv:.3f}")
    return EXIT_ACCEPTED


def cmd_synth(args):
    out = _out(args)
    cfg = SynthConfig(overlap_fraction=args.overlap, seed=args.seed)
    a, b, truth = generate_fragment_pair(cfg)
    r = compute_resolution(a)
    if args.noise > 0:
        a = add_gaussian_noise(a, args.noise * r, seed=args.seed + 1)
        b = add_gaussian_noise(b, args.noise * r, seed=args.seed + 2)
    if args.defects > 0:
        a = apply_abrasion(a, args.defects, args.defect_radius * r, seed=args.seed + 1)
        b = apply_abrasion(b, args.defects, args.defect_radius * r, seed=args.seed + 2)
    if args.keep < 1:
        a = downsample(a, args.keep, seed=args.seed + 1)
        b = downsample(b, args.keep, seed=args.seed + 2)
    save_ply(a, out / "A.ply")
    save_ply(b, out / "B.ply")
    write_ground_truth(out / "ground_truth.txt", truth, cfg)
    print(f"A: {len(a)} points, B: {len(b)} points, r = {r:.4f}")
    return EXIT_ACCEPTED


def cmd_pipeline(args):
    cfg, out = _config(args), _out(args)
    res = run_pipeline(args.src, args.dst, cfg, out, args.report_format)
    if res.accepted:
        rep = res.report
        print(f"accepted: {len(res.decision.correspondences)} correspondences, "
              f"{res.ransac_inliers} inliers, PoC {rep.poc:.2f}%, localAoNV {rep.local_aonv:.3f}, "
              f"{rep.runtime_seconds:.2f} s")
    else:
        print(f"rejected: {res.reject_reason}")
    return res.exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fragmatch", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("describe", help="detect keypoints and write a GMD sidecar")
    p.add_argument("cloud")
    p.set_defaults(func=cmd_describe)

    p = sub.add_parser("match", help="match two clouds or two .gmd.bin sidecars")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("align", help="RANSAC + ICP from a correspondence file")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("correspondences")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("evaluate", help="metrics for a given transform")
    p.add_argument("src")
    p.add_argument("dst")
    p.add_argument("transform")
    p.add_argument("--correspondences", help="CSV used for RMSE")
    p.add_argument("--keypoints", help="dst keypoint CSV for localAoNV (default: detect)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic fragment pair")
    p.add_argument("--overlap", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0, help="noise sigma in units of r")
    p.add_argument("--defects", type=int, default=0)
    p.add_argument("--defect-radius", type=float, default=3.0, help="in units of r")
    p.add_argument("--keep", type=float, default=1.0, help="downsampling keep fraction")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pipeline", help="full match of src against dst")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_pipeline)

    for name, sp in sub.choices.items():
        if name == "synth":
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--out-dir", default=".")
        else:
            _add_config_flags(sp)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
