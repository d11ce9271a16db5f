"""Evaluation of an alignment between two fractured surfaces.

Coverage (PoC), plane-normal angles (AoNV, localAoNV), normal angles of
nearest-neighbour pairs (MaA/MiA/MeA), correspondence RMSE and
precision/recall curves.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import Plane, PointCloud, RigidTransform
from .regions import extract_edge_points, fit_plane

__all__ = [
    "MatchReport",
    "project_to_plane",
    "poc",
    "aonv",
    "local_aonv",
    "angle_stats",
    "rmse",
    "pr_curve",
    "vector_angle_deg",
    "write_report_json",
    "write_report_csv",
    "write_pr_csv",
]


@dataclass
class MatchReport:
    poc: float
    aonv: float
    local_aonv: float
    max_angle: float
    min_angle: float
    mean_angle: float
    rmse_x: float = 0.0
    rmse_y: float = 0.0
    rmse_z: float = 0.0
    rmse_total: float = 0.0
    aonv_raw: float = float("nan")
    local_aonv_raw: float = float("nan")
    runtime_seconds: float | None = None


def vector_angle_deg(a, b) -> np.ndarray:
    """Angle between row vectors, exact zero for identical directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.degrees(np.arctan2(cross, dot))


def _fold(angle):
    return np.minimum(angle, 180.0 - angle)


def project_to_plane(cloud, plane: Plane) -> np.ndarray:
    """Orthogonal projection of every point onto ``plane``."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
    n = plane.normal
    t = (pts @ n + plane.offset) / (n @ n)
    return pts - t[:, None] * n[None, :]


def _mean_normal(cloud: PointCloud, idx=None):
    if cloud.normals is None:
        return None
    nrm = cloud.normals if idx is None else cloud.normals[idx]
    nrm = nrm[np.all(np.isfinite(nrm), axis=1)]
    if len(nrm) == 0:
        return None
    return nrm.sum(axis=0)


def _edge_plane(cloud: PointCloud) -> Plane:
    return fit_plane(cloud, extract_edge_points(cloud), orient_like=_mean_normal(cloud))


def poc(aligned_src: PointCloud, aligned_dst: PointCloud, chi: float) -> float:
    """Percentage of the smaller surface's projected points that have a
    projected point of the bigger surface within ``chi``."""
    big, small = aligned_src, aligned_dst
    if len(aligned_dst) > len(aligned_src):
        big, small = aligned_dst, aligned_src
    plane = _edge_plane(big)
    pb = project_to_plane(big, plane)
    ps = project_to_plane(small, plane)
    d, _ = cKDTree(pb).query(ps)
    return 100.0 * float(np.count_nonzero(d < chi)) / len(ps)


def aonv(src: PointCloud, dst: PointCloud, folded: bool = True) -> float:
    """Angle between the edge-point planes of the two surfaces.

    Raw angles use plane normals oriented like the surfaces' mean normal;
    ``folded`` maps them to [0, 90].
    """
    ang = float(vector_angle_deg(_edge_plane(src).normal, _edge_plane(dst).normal))
    return float(_fold(ang)) if folded else ang


def _principal_frame(points):
    c = points.mean(axis=0)
    _, v = np.linalg.eigh(np.cov((points - c).T))
    return v


def local_aonv(
    src: PointCloud, dst: PointCloud, keypoints, l: float, folded: bool = True, min_points: int = 3
) -> float:
    """Mean plane-normal angle inside cubes of side ``l`` centred at the
    keypoints of ``dst``.

    The cubes are aligned with the principal axes of ``dst`` so the value
    does not change when both surfaces move rigidly together.
    """
    half = 0.5 * l
    frame = _principal_frame(dst.points)
    # Chebyshev ball in the principal frame == oriented cube
    tree_s = cKDTree(src.points @ frame)
    tree_d = cKDTree(dst.points @ frame)
    angles = []
    for kp in np.asarray(keypoints, dtype=np.intp):
        c = dst.points[kp] @ frame
        si = tree_s.query_ball_point(c, half, p=np.inf)
        di = tree_d.query_ball_point(c, half, p=np.inf)
        if len(si) < min_points or len(di) < min_points:
            continue
        try:
            ps = fit_plane(src, si, orient_like=_mean_normal(src, si))
            pd = fit_plane(dst, di, orient_like=_mean_normal(dst, di))
        except ValueError:
            continue
        angles.append(float(vector_angle_deg(ps.normal, pd.normal)))
    if not angles:
        raise ValueError("no bounding box contains enough points of both surfaces")
    angles = np.asarray(angles)
    return float(np.mean(_fold(angles) if folded else angles))


def angle_stats(src: PointCloud, dst: PointCloud) -> tuple[float, float, float]:
    """(max, min, mean) angle between each src normal and its nearest dst point's normal."""
    if len(src) == 0 or len(dst) == 0:
        raise ValueError("empty cloud")
    if src.normals is None or dst.normals is None:
        raise ValueError("angle statistics need normals on both clouds")
    _, j = dst.kdtree.query(src.points)
    ang = vector_angle_deg(src.normals, dst.normals[j])
    ang = ang[np.isfinite(ang)]
    if len(ang) == 0:
        raise ValueError("no point pairs with set normals")
    return float(ang.max()), float(ang.min()), float(ang.mean())


def rmse(correspondences, src: PointCloud, dst: PointCloud, transform: RigidTransform):
    """Per-axis and total RMS of ``R s_i + t - d_i`` over the correspondences.

    Returns ``(rmse_x, rmse_y, rmse_z, rmse_total)``.
    """
    if len(correspondences) == 0:
        raise ValueError("RMSE needs at least one correspondence")
    s = np.array([src.points[c.source_keypoint] for c in correspondences])
    d = np.array([dst.points[c.target_keypoint] for c in correspondences])
    diff = transform.apply(s) - d
    per_axis = np.sqrt(np.mean(diff**2, axis=0))
    total = float(np.sqrt(np.mean(np.sum(diff**2, axis=1))))
    return float(per_axis[0]), float(per_axis[1]), float(per_axis[2]), total


def pr_curve(matches, ground_truth, thresholds) -> list[tuple[float, float, float]]:
    """``(threshold, precision, recall)`` for matches with distance <= threshold.

    ``ground_truth`` is a set of ``(source_keypoint, target_keypoint)`` pairs.
    Precision is 1 when no match is returned.
    """
    gt = {(int(a), int(b)) for a, b in ground_truth}
    if not gt:
        raise ValueError("empty ground truth")
    dist = np.array([m.distance for m in matches], dtype=np.float64)
    correct = np.array([(m.source_keypoint, m.target_keypoint) in gt for m in matches], bool)
    out = []
    for th in sorted(float(t) for t in thresholds):
        sel = dist <= th
        n_ret = int(sel.sum())
        n_ok = int((sel & correct).sum())
        precision = n_ok / n_ret if n_ret else 1.0
        out.append((th, precision, n_ok / len(gt)))
    return out


def report_dict(report: MatchReport, include_runtime: bool = False) -> dict:
    d = asdict(report)
    if not include_runtime:
        d.pop("runtime_seconds")
    return d


def write_report_json(path, report: MatchReport, include_runtime: bool = False) -> None:
    with open(path, "w") as fh:
        json.dump(report_dict(report, include_runtime), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path, report: MatchReport, include_runtime: bool = False) -> None:
    d = report_dict(report, include_runtime)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(list(d))
        w.writerow([repr(v) if isinstance(v, float) else v for v in d.values()])


def write_pr_csv(path, curve) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["threshold", "precision", "recall"])
        for row in curve:
            w.writerow([repr(float(v)) for v in row])
