"""Local reference frames at feature points."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .keypoints import SurfacePatch
from .pointcloud import PointCloud

__all__ = ["LRF", "DegenerateFrame", "patch_covariance", "compute_lrf", "to_local_frame"]


class DegenerateFrame(ValueError):
    pass


@dataclass(frozen=True)
class LRF:
    origin: np.ndarray
    x_axis: np.ndarray
    y_axis: np.ndarray
    z_axis: np.ndarray

    @property
    def basis(self) -> np.ndarray:
        """Rows are the axes, so ``basis @ v`` gives local coordinates."""
        return np.vstack([self.x_axis, self.y_axis, self.z_axis])


def patch_covariance(points: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Unbiased scatter of the patch about the feature point (not the centroid)."""
    d = points - center
    return d.T @ d / (len(points) - 1)


def compute_lrf(cloud: PointCloud, patch: SurfacePatch) -> LRF:
    """Frame with z along the least-variance direction of the patch.

    Both the z sign test and the x direction use ``sum_i (p - p_i)``; x is
    orthogonalised against z before normalising, and y = z × x.
    """
    p = cloud.points[patch.center_index]
    pts = cloud.points[patch.point_indices]
    if len(pts) < 3:
        raise DegenerateFrame("patch needs at least 3 points")
    w, v = np.linalg.eigh(patch_covariance(pts, p))
    if w[1] <= 1e-12 * max(w[2], 1e-300):
        raise DegenerateFrame(f"keypoint {patch.center_index}: collinear patch (rank < 2)")
    z = v[:, 0]
    toward = np.sum(p - pts, axis=0)
    if z @ toward < 0:
        z = -z
    x = toward - (toward @ z) * z
    scale = np.sum(np.linalg.norm(pts - p, axis=1))
    nx = np.linalg.norm(x)
    if nx <= 1e-6 * max(scale, 1e-300):
        raise DegenerateFrame(f"keypoint {patch.center_index}: x direction parallel to z")
    x = x / nx
    y = np.cross(z, x)
    return LRF(p.copy(), x, y / np.linalg.norm(y), z)


def to_local_frame(cloud: PointCloud, patch: SurfacePatch, lrf: LRF) -> np.ndarray:
    return (cloud.points[patch.point_indices] - lrf.origin) @ lrf.basis.T
