"""Feature-point detection on colourless surfaces and spherical support patches.

Detection follows the point-cloud SIFT recipe with surface variation
(a curvature proxy) standing in for the missing intensity channel: a Gaussian
scale space of the curvature field is built per octave, difference-of-Gaussian
extrema across neighbouring scales become candidates, and the survivors are
thinned by non-maximum suppression.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import PointCloud, compute_resolution, radius_search, surface_variation

__all__ = [
    "SiftParams",
    "SurfacePatch",
    "InsufficientSupport",
    "detect_keypoints",
    "extract_patch",
    "write_keypoints_csv",
    "MIN_PATCH_SIZE",
]

MIN_PATCH_SIZE = 20

# |DoG| at or below this is numerical noise of a flat field
_DOG_FLOOR = 1e-9


class InsufficientSupport(ValueError):
    pass


@dataclass(frozen=True)
class SiftParams:
    """Scale-space settings. Lengths left as ``None`` default to one resolution."""

    min_scale: float | None = None
    n_octaves: int = 3
    scales_per_octave: int = 4
    min_contrast: float = 0.0
    nms_radius: float | None = None
    curvature_k: int = 10


@dataclass(frozen=True)
class SurfacePatch:
    center_index: int
    point_indices: np.ndarray
    R: float

    def __len__(self) -> int:
        return len(self.point_indices)


def _poisson_subset(tree: cKDTree, pts: np.ndarray, spacing: float) -> np.ndarray:
    """Greedy min-distance subsample in index order.

    Depends only on pairwise distances and point order, so it commutes with
    rigid motions of the cloud.
    """
    nbrs = tree.query_ball_point(pts, spacing * (1 - 1e-12))
    taken = np.zeros(len(pts), dtype=bool)
    blocked = np.zeros(len(pts), dtype=bool)
    for i in range(len(pts)):
        if blocked[i]:
            continue
        taken[i] = True
        blocked[nbrs[i]] = True
    return np.flatnonzero(taken)


def _octave_extrema(cloud, intensity, base_scale, n_scales, min_contrast):
    """DoG extrema of one octave: returns (cloud indices, responses)."""
    pts = cloud.points
    sub = _poisson_subset(cloud.kdtree, pts, base_scale)
    if len(sub) < 2:
        return np.empty(0, np.intp), np.empty(0)
    sigmas = base_scale * 2.0 ** (np.arange(n_scales + 3) / n_scales)
    sub_tree = cKDTree(pts[sub])
    smat = sub_tree.sparse_distance_matrix(cloud.kdtree, 3.0 * sigmas[-1], output_type="coo_matrix")
    rows, cols, dist = smat.row, smat.col, smat.data
    # sparse_distance_matrix drops exact zeros (self-pairs); put them back
    rows = np.concatenate([rows, np.arange(len(sub))])
    cols = np.concatenate([cols, sub])
    dist = np.concatenate([dist, np.zeros(len(sub))])
    d2 = dist**2

    gauss = np.empty((len(sigmas), len(sub)))
    for s, sig in enumerate(sigmas):
        w = np.exp(-0.5 * d2 / sig**2)
        w[dist > 3.0 * sig] = 0.0
        num = np.bincount(rows, weights=w * intensity[cols], minlength=len(sub))
        den = np.bincount(rows, weights=w, minlength=len(sub))
        gauss[s] = num / den
    dog = np.diff(gauss, axis=0)  # n_scales + 2 levels

    nbr = sub_tree.query_ball_point(pts[sub], 2.0 * base_scale)
    lens = np.fromiter((len(n) for n in nbr), dtype=np.intp, count=len(nbr))
    flat = np.concatenate([np.asarray(n, dtype=np.intp) for n in nbr])
    owner = np.repeat(np.arange(len(sub)), lens)
    is_self = flat == owner

    out_idx, out_resp = [], []
    for s in range(1, n_scales + 1):
        v = dog[s]
        stack = dog[s - 1 : s + 2][:, flat]  # (3, E) neighbour values
        cmp_gt = np.ones(len(sub), dtype=bool)
        cmp_lt = np.ones(len(sub), dtype=bool)
        for lvl in range(3):
            vals = stack[lvl]
            mask = ~is_self if lvl == 1 else np.ones_like(is_self)
            gt_fail = np.zeros(len(sub), dtype=bool)
            lt_fail = np.zeros(len(sub), dtype=bool)
            np.logical_or.at(gt_fail, owner[mask], vals[mask] >= v[owner[mask]])
            np.logical_or.at(lt_fail, owner[mask], vals[mask] <= v[owner[mask]])
            cmp_gt &= ~gt_fail
            cmp_lt &= ~lt_fail
        ext = (cmp_gt | cmp_lt) & (np.abs(v) > max(min_contrast, _DOG_FLOOR))
        out_idx.append(sub[ext])
        out_resp.append(np.abs(v[ext]))
    return np.concatenate(out_idx), np.concatenate(out_resp)


def detect_keypoints(
    cloud: PointCloud,
    params: SiftParams | None = None,
    resolution: float | None = None,
    return_response: bool = False,
):
    """Indices of feature points ordered by decreasing DoG response.

    Returns an empty array when the curvature field has no extrema (e.g. an
    exact plane). With ``return_response`` a ``(indices, responses)`` pair is
    returned instead.
    """
    params = params or SiftParams()
    r = compute_resolution(cloud) if resolution is None else resolution
    min_scale = params.min_scale if params.min_scale is not None else r
    nms = params.nms_radius if params.nms_radius is not None else r

    intensity = surface_variation(cloud, params.curvature_k)
    best = {}
    for o in range(params.n_octaves):
        idx, resp = _octave_extrema(
            cloud, intensity, min_scale * 2.0**o, params.scales_per_octave, params.min_contrast
        )
        for i, v in zip(idx.tolist(), resp.tolist()):
            if v > best.get(i, -1.0):
                best[i] = v
    if not best:
        empty = np.empty(0, dtype=np.intp)
        return (empty, np.empty(0)) if return_response else empty

    cand = np.fromiter(best.keys(), dtype=np.intp, count=len(best))
    resp = np.fromiter(best.values(), dtype=np.float64, count=len(best))
    order = np.lexsort((cand, -resp))
    cand, resp = cand[order], resp[order]

    tree = cKDTree(cloud.points[cand])
    suppressed = np.zeros(len(cand), dtype=bool)
    keep = []
    for j in range(len(cand)):
        if suppressed[j]:
            continue
        keep.append(j)
        suppressed[tree.query_ball_point(cloud.points[cand[j]], nms)] = True
    keep = np.asarray(keep, dtype=np.intp)
    if return_response:
        return cand[keep], resp[keep]
    return cand[keep]


def extract_patch(
    cloud: PointCloud, center: int, R: float, min_size: int = MIN_PATCH_SIZE
) -> SurfacePatch:
    """All points strictly within ``R`` of the feature point (itself included)."""
    if R <= 0:
        raise ValueError("support radius must be positive")
    idx = radius_search(cloud, cloud.points[center], R)
    if len(idx) < min_size:
        raise InsufficientSupport(
            f"keypoint {center}: {len(idx)} points within R={R:g}, need {min_size}"
        )
    return SurfacePatch(int(center), idx, float(R))


def write_keypoints_csv(path, cloud: PointCloud, indices, responses=None) -> None:
    indices = np.asarray(indices, dtype=np.intp)
    if responses is None:
        responses = np.full(len(indices), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "z", "response"])
        for i, resp in zip(indices, responses):
            x, y, z = cloud.points[i]
            w.writerow([int(i), repr(float(x)), repr(float(y)), repr(float(z)), repr(float(resp))])
