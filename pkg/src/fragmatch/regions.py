"""Reference planes, boundary points and concave/convex labelling of patches."""
from __future__ import annotations

import csv

import numpy as np
from scipy.spatial import cKDTree

from .keypoints import SurfacePatch
from .pointcloud import Plane, PointCloud

__all__ = [
    "CONVEX",
    "CONCAVE",
    "extract_edge_points",
    "fit_plane",
    "classify_concavity",
    "write_labels_csv",
]

CONVEX = 1
CONCAVE = -1


def _indices_of(cloud: PointCloud, where) -> np.ndarray:
    if where is None:
        return np.arange(len(cloud))
    if isinstance(where, SurfacePatch):
        return where.point_indices
    return np.asarray(where, dtype=np.intp)


def extract_edge_points(
    cloud: PointCloud, where=None, k: int = 10, max_gap_deg: float = 90.0
) -> np.ndarray:
    """Boundary points of a patch (or of the whole cloud when ``where`` is None).

    A point is on the boundary when its ``k`` nearest neighbours, projected
    onto the local tangent plane, leave an angular gap wider than
    ``max_gap_deg`` around it.
    """
    idx = _indices_of(cloud, where)
    n = len(idx)
    if n < 3:
        raise ValueError(f"need at least 3 points for edge extraction, got {n}")
    pts = cloud.points[idx]
    kk = min(k, n - 1)
    _, nbr = cKDTree(pts).query(pts, k=kk + 1)
    nbr = nbr[:, 1:]
    local = pts[nbr] - pts[:, None, :]  # (n, kk, 3)

    hood = np.concatenate([pts[:, None, :], pts[nbr]], axis=1)
    centered = hood - hood.mean(axis=1, keepdims=True)
    _, vecs = np.linalg.eigh(np.einsum("nki,nkj->nij", centered, centered))
    u, v = vecs[:, :, 2], vecs[:, :, 1]
    ang = np.arctan2(np.einsum("nki,ni->nk", local, v), np.einsum("nki,ni->nk", local, u))
    ang = np.sort(ang, axis=1)
    gaps = np.diff(ang, axis=1)
    wrap = 2 * np.pi - (ang[:, -1] - ang[:, 0])
    max_gap = np.maximum(gaps.max(axis=1, initial=0.0), wrap)
    edge = idx[max_gap > np.radians(max_gap_deg)]
    if len(edge) < 3:
        raise ValueError(f"only {len(edge)} edge points found, need 3")
    return edge


def fit_plane(cloud: PointCloud, indices=None, orient_like=None) -> Plane:
    """Total-least-squares plane through the centroid of the selected points."""
    pts = cloud.points[_indices_of(cloud, indices)]
    if len(pts) < 3:
        raise ValueError("plane fit needs at least 3 points")
    c = pts.mean(axis=0)
    w, v = np.linalg.eigh(np.cov((pts - c).T, bias=True))
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise ValueError("plane fit on collinear points (rank < 2)")
    n = v[:, 0]
    if orient_like is not None and n @ np.asarray(orient_like, float) < 0:
        n = -n
    return Plane(n, float(-n @ c))


def classify_concavity(
    cloud: PointCloud, patch, plane: Plane, mode: str = "normal"
) -> np.ndarray:
    """+1 (convex) / -1 (concave) per patch point.

    ``mode="normal"`` compares each point normal with the plane normal;
    ``mode="distance"`` uses the side of the plane the point lies on.
    """
    idx = _indices_of(cloud, patch)
    if mode == "normal":
        if cloud.normals is None:
            raise ValueError("concavity by normals needs a cloud with normals")
        nrm = cloud.normals[idx]
        if not np.all(np.isfinite(nrm)):
            raise ValueError("patch contains points with unset normals")
        score = nrm @ plane.normal
    elif mode == "distance":
        score = plane.signed_distance(cloud.points[idx])
    else:
        raise ValueError(f"unknown concavity mode {mode!r}")
    return np.where(score >= 0, CONVEX, CONCAVE).astype(np.int8)


def write_labels_csv(path, cloud: PointCloud, indices, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "x", "y", "z", "label"])
        for i, lab in zip(np.asarray(indices), labels):
            x, y, z = cloud.points[i]
            w.writerow([int(i), repr(float(x)), repr(float(y)), repr(float(z)), int(lab)])
