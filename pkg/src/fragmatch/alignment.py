"""Rigid alignment: least-squares fit, RANSAC over correspondences, point-to-point ICP."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .pointcloud import PointCloud, RigidTransform

__all__ = [
    "AlignmentResult",
    "AlignmentFailure",
    "estimate_rigid_from_triplets",
    "ransac_align",
    "icp_refine",
    "write_transform",
    "read_transform",
]


class AlignmentFailure(RuntimeError):
    pass


@dataclass
class AlignmentResult:
    transform: RigidTransform
    inlier_indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.intp))
    ransac_inlier_ratio: float = 0.0
    icp_final_error: float = 0.0
    iterations_used: int = 0
    residual_history: list = field(default_factory=list)


def estimate_rigid_from_triplets(src_pts, dst_pts) -> RigidTransform:
    """Least-squares ``R, t`` with ``R @ s + t ≈ d`` (Kabsch, det forced to +1)."""
    s = np.asarray(src_pts, dtype=np.float64).reshape(-1, 3)
    d = np.asarray(dst_pts, dtype=np.float64).reshape(-1, 3)
    if len(s) != len(d) or len(s) < 3:
        raise ValueError("need at least 3 paired points")
    cs, cd = s.mean(axis=0), d.mean(axis=0)
    s0, d0 = s - cs, d - cd
    sv = np.linalg.svd(s0, compute_uv=False)
    if sv[1] <= 1e-9 * max(sv[0], 1e-300):
        raise ValueError("collinear point sample")
    u, _, vt = np.linalg.svd(d0.T @ s0)
    fix = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt)) or 1.0])
    rot = u @ fix @ vt
    return RigidTransform(rot, cd - rot @ cs)


def _edge_lengths_agree(s, d, ratio):
    for a, b in ((0, 1), (0, 2), (1, 2)):
        ls = np.linalg.norm(s[a] - s[b])
        ld = np.linalg.norm(d[a] - d[b])
        hi = max(ls, ld)
        if hi == 0 or min(ls, ld) < ratio * hi:
            return False
    return True


def ransac_align(
    correspondences,
    src: PointCloud,
    dst: PointCloud,
    inlier_tol: float,
    max_iters: int = 2000,
    seed: int = 0,
    edge_ratio: float = 0.9,
) -> AlignmentResult:
    """Best 3-sample rigid model by inlier count, refitted on its inliers.

    Samples whose three edge lengths disagree by more than ``edge_ratio``
    between source and target are discarded before fitting.
    """
    n = len(correspondences)
    if n < 3:
        raise AlignmentFailure(f"RANSAC needs 3 correspondences, got {n}")
    s = np.array([src.points[c.source_keypoint] for c in correspondences])
    d = np.array([dst.points[c.target_keypoint] for c in correspondences])
    rng = np.random.default_rng(seed)

    def score(t):
        res = np.linalg.norm(t.apply(s) - d, axis=1)
        inl = res < inlier_tol
        return int(inl.sum()), float(res[inl].sum()), inl

    best = (0, np.inf, None, None)  # count, residual sum, transform, mask
    for _ in range(max_iters):
        pick = rng.choice(n, 3, replace=False)
        if not _edge_lengths_agree(s[pick], d[pick], edge_ratio):
            continue
        try:
            t = estimate_rigid_from_triplets(s[pick], d[pick])
        except ValueError:
            continue
        cnt, rsum, inl = score(t)
        if cnt > best[0] or (cnt == best[0] and rsum < best[1]):
            best = (cnt, rsum, t, inl)
    if best[0] < 3:
        raise AlignmentFailure(f"best RANSAC model has {best[0]} inliers, need 3")

    cnt, _, t, inl = best
    try:
        refit = estimate_rigid_from_triplets(s[inl], d[inl])
        rcnt, _, rinl = score(refit)
        if rcnt >= cnt:
            t, inl = refit, rinl
    except ValueError:
        pass
    idx = np.flatnonzero(inl)
    return AlignmentResult(t, idx, len(idx) / n)


def icp_refine(
    src: PointCloud,
    dst: PointCloud,
    init: RigidTransform,
    max_corr_dist: float,
    max_iters: int = 100,
    eps: float = 1e-6,
) -> AlignmentResult:
    """Point-to-point ICP with nearest neighbours capped at ``max_corr_dist``.

    The tracked residual is the RMS of nearest-neighbour distances truncated
    at the cap, which ICP cannot increase. ``icp_final_error`` is the mean
    distance over the capped correspondences at the returned transform.
    """
    tree = dst.kdtree
    cap2 = max_corr_dist**2

    def residual(t):
        moved = t.apply(src.points)
        dist, j = tree.query(moved)
        mask = dist < max_corr_dist
        res = float(np.sqrt(np.mean(np.minimum(dist**2, cap2))))
        return res, moved, dist, j, mask

    cur = init
    res, moved, dist, j, mask = residual(cur)
    if mask.sum() < 3:
        raise AlignmentFailure("ICP found fewer than 3 correspondences at the initial pose")
    history = [res]
    it = 0
    for it in range(1, max_iters + 1):
        try:
            delta = estimate_rigid_from_triplets(moved[mask], dst.points[j[mask]])
        except ValueError:
            break
        nxt = delta.compose(cur)
        nres, nmoved, ndist, nj, nmask = residual(nxt)
        if nres > res or nmask.sum() < 3:
            break
        cur, res, moved, dist, j, mask = nxt, nres, nmoved, ndist, nj, nmask
        history.append(res)
        if abs(history[-2] - res) < eps:
            break
    err = float(dist[mask].mean()) if mask.any() else float("inf")
    return AlignmentResult(cur, icp_final_error=err, iterations_used=it, residual_history=history)


def write_transform(path, t: RigidTransform) -> None:
    """Homogeneous 4x4 matrix, one row per line, 16 decimals."""
    m = t.matrix()
    with open(path, "w") as fh:
        for row in m:
            fh.write(" ".join(f"{float(v):.16f}" for v in row) + "\n")


def read_transform(path) -> RigidTransform:
    with open(path) as fh:
        vals = [float(v) for v in fh.read().split()]
    if len(vals) != 16:
        raise ValueError(f"{path}: expected 16 values, got {len(vals)}")
    return RigidTransform.from_matrix(np.array(vals).reshape(4, 4))
