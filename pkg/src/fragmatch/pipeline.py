"""End-to-end pairwise matching: detect, describe, match, decide, align, evaluate."""
from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .alignment import AlignmentFailure, AlignmentResult, icp_refine, ransac_align, write_transform
from .gmd import GMD, DescriptorParams, describe_keypoints, write_gmd_bin
from .keypoints import detect_keypoints
from .matching import (
    MatchDecision,
    adaptive_thresholds,
    decide_surface_pair,
    distance_matrix,
    match_descriptors,
    write_correspondences_csv,
)
from .metrics import (
    MatchReport,
    angle_stats,
    aonv,
    local_aonv,
    poc,
    rmse,
    write_report_csv,
    write_report_json,
)
from .ply import load_ply
from .pointcloud import PointCloud, RigidTransform, apply_transform, compute_resolution, estimate_normals

__all__ = [
    "RunConfig",
    "PipelineError",
    "PipelineResult",
    "SurfaceFeatures",
    "load_config",
    "prepare_surface",
    "match_surfaces",
    "align_surfaces",
    "evaluate_alignment",
    "run_pipeline",
]

EXIT_ACCEPTED, EXIT_ERROR, EXIT_REJECTED = 0, 1, 2


def _default_threads():
    return os.cpu_count() or 1


@dataclass(frozen=True)
class RunConfig:
    """Every pipeline knob. Multipliers are in units of the point resolution."""

    radius_mult: float = 6.0
    chi_mult: float = 2.0
    box_mult: float = 10.0
    zeta_factor: float = 0.6
    psi_factor: float = 0.8
    ratio: float = 0.9
    min_count: int = 3
    min_inliers: int = 4  # one confirmation beyond the minimal sample
    ransac_tol_mult: float = 2.0
    ransac_iters: int = 2000
    icp_cap_mult: float = 5.0
    icp_iters: int = 100
    icp_eps: float = 1e-6
    tau: float = 1e-6
    k_max: int = 8
    seed: int = 0
    threads: int = field(default_factory=_default_threads)

    def __post_init__(self):
        for f in fields(self):
            if f.name.endswith(("_mult", "_factor")) and not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be > 0")
        if not 0 < self.ratio <= 1:
            raise ValueError("ratio must lie in (0, 1]")
        if self.threads < 1 or self.k_max < 1 or self.tau <= 0:
            raise ValueError("threads and k_max must be >= 1, tau > 0")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be >= 3")

    def descriptor_params(self) -> DescriptorParams:
        return DescriptorParams(radius_mult=self.radius_mult, k_max=self.k_max, tau=self.tau)

    def updated(self, **overrides) -> "RunConfig":
        """Copy with string or typed overrides; ``None`` values are ignored."""
        types = {f.name: type(getattr(self, f.name)) for f in fields(self)}
        clean = {}
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in types:
                raise ValueError(f"unknown config key {k!r}")
            clean[k] = types[k](v) if not isinstance(v, str) else _coerce(types[k], k, v)
        return replace(self, **clean)


def _coerce(typ, key, text):
    try:
        return typ(float(text)) if typ is int and "." not in text and "e" not in text.lower() \
            else typ(text)
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot read {text!r} as {typ.__name__}") from None


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k.replace("-", "_")] = v
    return (base or RunConfig()).updated(**values)


class PipelineError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


@dataclass
class SurfaceFeatures:
    cloud: PointCloud
    resolution: float
    keypoints: np.ndarray
    descriptors: list
    skipped: dict


@dataclass
class PipelineResult:
    decision: MatchDecision
    alignment: AlignmentResult | None = None
    report: MatchReport | None = None
    ransac_inliers: int = 0
    reject_reason: str = ""

    @property
    def accepted(self) -> bool:
        return self.alignment is not None

    @property
    def exit_code(self) -> int:
        return EXIT_ACCEPTED if self.accepted else EXIT_REJECTED


def _load(x) -> PointCloud:
    if isinstance(x, PointCloud):
        cloud = x
    else:
        try:
            cloud = load_ply(x)
        except (OSError, ValueError) as exc:
            raise PipelineError("load", str(exc)) from None
    if len(cloud) < 3:
        raise PipelineError("load", f"{cloud.source_id or 'cloud'} has {len(cloud)} points")
    if cloud.normals is None or not cloud.normal_mask.all():
        try:
            cloud = estimate_normals(cloud)
        except ValueError as exc:
            raise PipelineError("normals", str(exc)) from None
    return cloud


def prepare_surface(cloud, config: RunConfig) -> SurfaceFeatures:
    """Load (if given a path), detect keypoints and describe them."""
    cloud = _load(cloud)
    r = compute_resolution(cloud)
    try:
        kps = detect_keypoints(cloud, resolution=r)
    except ValueError as exc:
        raise PipelineError("detect", str(exc)) from None
    if len(kps) == 0:
        raise PipelineError("detect", f"no keypoints on {cloud.source_id or 'cloud'}")
    descs, skipped = describe_keypoints(cloud, kps, config.radius_mult * r, r,
                                        config.descriptor_params(), config.seed, config.threads)
    if not descs:
        raise PipelineError("describe", f"every keypoint was skipped ({len(skipped)})")
    return SurfaceFeatures(cloud, r, np.asarray(kps, dtype=np.intp), descs, skipped)


def match_surfaces(src_desc: list[GMD], dst_desc: list[GMD], config: RunConfig) -> MatchDecision:
    D = distance_matrix(src_desc, dst_desc)
    zeta, psi = adaptive_thresholds(D, config.zeta_factor, config.psi_factor)
    corrs = match_descriptors(src_desc, dst_desc, zeta, config.ratio, D=D)
    return decide_surface_pair(corrs, psi, config.min_count, zeta)


def align_surfaces(corrs, src: PointCloud, dst: PointCloud, r: float, config: RunConfig):
    """RANSAC on correspondences then ICP on the full clouds."""
    coarse = ransac_align(corrs, src, dst, config.ransac_tol_mult * r,
                          config.ransac_iters, config.seed)
    fine = icp_refine(src, dst, coarse.transform, config.icp_cap_mult * r,
                      config.icp_iters, config.icp_eps)
    fine.inlier_indices = coarse.inlier_indices
    fine.ransac_inlier_ratio = coarse.ransac_inlier_ratio
    return fine


def evaluate_alignment(
    src: PointCloud, dst: PointCloud, transform: RigidTransform, dst_keypoints, r: float,
    config: RunConfig, correspondences=(),
) -> MatchReport:
    moved = apply_transform(src, transform)
    chi, box = config.chi_mult * r, config.box_mult * r
    mx, mn, me = angle_stats(moved, dst)
    rx = ry = rz = rt = float("nan")
    if len(correspondences):
        rx, ry, rz, rt = rmse(correspondences, src, dst, transform)
    return MatchReport(
        poc=poc(moved, dst, chi),
        aonv=aonv(moved, dst),
        local_aonv=local_aonv(moved, dst, dst_keypoints, box),
        max_angle=mx, min_angle=mn, mean_angle=me,
        rmse_x=rx, rmse_y=ry, rmse_z=rz, rmse_total=rt,
        aonv_raw=aonv(moved, dst, folded=False),
        local_aonv_raw=local_aonv(moved, dst, dst_keypoints, box, folded=False),
    )


def _write_decision(path, result: PipelineResult):
    d = result.decision
    out = {
        "accepted": result.accepted,
        "descriptor_accepted": d.accepted,
        "aggregate_distance": d.aggregate_distance,
        "zeta": d.zeta,
        "psi": d.psi,
        "n_correspondences": len(d.correspondences),
        "ransac_inliers": result.ransac_inliers,
        "reject_reason": result.reject_reason,
    }
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_pipeline(src, dst, config: RunConfig | None = None, out_dir=None,
                 report_format: str = "json") -> PipelineResult:
    """Match ``src`` against ``dst`` (paths or clouds) and align on acceptance.

    Acceptance needs the descriptor decision and a RANSAC model with at
    least ``config.min_inliers`` inliers. Output files contain nothing that
    depends on timing or thread count.
    """
    config = config or RunConfig()
    t0 = time.perf_counter()
    a = prepare_surface(src, config)
    b = prepare_surface(dst, config)
    r = 0.5 * (a.resolution + b.resolution)
    try:
        decision = match_surfaces(a.descriptors, b.descriptors, config)
    except ValueError as exc:
        raise PipelineError("match", str(exc)) from None
    result = PipelineResult(decision)

    if not decision.accepted:
        result.reject_reason = (f"{len(decision.correspondences)} correspondences with mean "
                                f"distance {decision.aggregate_distance:.6g} (psi {decision.psi:.6g})")
    else:
        try:
            aligned = align_surfaces(decision.correspondences, a.cloud, b.cloud, r, config)
            result.ransac_inliers = len(aligned.inlier_indices)
            if result.ransac_inliers < config.min_inliers:
                result.reject_reason = (f"geometric check: {result.ransac_inliers} RANSAC inliers, "
                                        f"need {config.min_inliers}")
            else:
                result.alignment = aligned
        except AlignmentFailure as exc:
            result.reject_reason = f"geometric check: {exc}"

    if result.alignment is not None:
        inl = [decision.correspondences[i] for i in result.alignment.inlier_indices]
        try:
            result.report = evaluate_alignment(a.cloud, b.cloud, result.alignment.transform,
                                               b.keypoints, r, config, inl)
        except ValueError as exc:
            raise PipelineError("metrics", str(exc)) from None
        result.report.runtime_seconds = time.perf_counter() - t0

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_gmd_bin(out / "src.gmd.bin", a.descriptors)
        write_gmd_bin(out / "dst.gmd.bin", b.descriptors)
        write_correspondences_csv(out / "correspondences.csv", decision.correspondences)
        _write_decision(out / "decision.json", result)
        if result.alignment is not None:
            write_transform(out / "transform.txt", result.alignment.transform)
            if report_format == "csv":
                write_report_csv(out / "report.csv", result.report)
            else:
                write_report_json(out / "report.json", result.report)
    return result
