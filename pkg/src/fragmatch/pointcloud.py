"""Point clouds with optional per-point normals, spatial queries and rigid transforms."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "RigidTransform",
    "Plane",
    "compute_resolution",
    "estimate_normals",
    "radius_search",
    "apply_transform",
    "default_viewpoint",
]


@dataclass(eq=False)
class PointCloud:
    """An ordered set of 3D points.

    ``normals`` is either ``None`` or an ``(M, 3)`` array; rows that are NaN
    mark points whose normal is unset (e.g. a degenerate neighborhood).
    The cloud is treated as immutable once built, so the KD-tree is cached.
    """

    points: np.ndarray
    normals: np.ndarray | None = None
    source_id: str = ""

    def __post_init__(self):
        pts = np.ascontiguousarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (M, 3), got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point positions must be finite")
        self.points = pts
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != pts.shape:
                raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
            set_ = np.all(np.isfinite(nrm), axis=1)
            if np.any(np.abs(np.linalg.norm(nrm[set_], axis=1) - 1.0) > 1e-6):
                raise ValueError("set normals must have unit length")
            self.normals = nrm

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def normal_mask(self) -> np.ndarray:
        """Boolean mask of points with a set normal."""
        if self.normals is None:
            return np.zeros(len(self), dtype=bool)
        return np.all(np.isfinite(self.normals), axis=1)

    @cached_property
    def kdtree(self) -> cKDTree:
        return cKDTree(self.points)

    def subset(self, indices) -> "PointCloud":
        idx = np.asarray(indices, dtype=np.intp)
        normals = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], normals, self.source_id)

    def with_normals(self, normals: np.ndarray | None) -> "PointCloud":
        return PointCloud(self.points, normals, self.source_id)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > 1e-6:
            raise ValueError("rotation must have det = +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "RigidTransform":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ other`` (apply ``other`` first)."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def apply(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=np.float64) @ self.rotation.T + self.translation

    def rotation_error_deg(self, other: "RigidTransform") -> float:
        """Geodesic angle between the two rotations, in degrees."""
        rel = self.rotation.T @ other.rotation
        c = np.clip((np.trace(rel) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(c)))


@dataclass(frozen=True)
class Plane:
    """``normal · x + offset = 0`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def signed_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts) @ self.normal + self.offset


def compute_resolution(cloud: PointCloud) -> float:
    """Mean nearest-neighbour distance of the cloud."""
    if len(cloud) < 2:
        raise ValueError("resolution needs at least two points")
    d, _ = cloud.kdtree.query(cloud.points, k=2)
    return float(np.mean(d[:, 1]))


def radius_search(cloud: PointCloud, center, radius: float) -> np.ndarray:
    """Indices of points strictly closer than ``radius`` to ``center``, sorted."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    center = np.asarray(center, dtype=np.float64)
    idx = np.asarray(cloud.kdtree.query_ball_point(center, radius), dtype=np.intp)
    if idx.size:
        # the tree query is inclusive at the boundary
        d = np.linalg.norm(cloud.points[idx] - center, axis=1)
        idx = idx[d < radius]
    return np.sort(idx)


def default_viewpoint(points: np.ndarray) -> np.ndarray:
    """Centroid pushed out along the direction of least spread.

    For a roughly sheet-like fractured surface this lies on one side of the
    sheet, so every normal ends up on that side.
    """
    c = points.mean(axis=0)
    if points.shape[0] < 3:
        return c + np.array([0.0, 0.0, 1.0])
    w, v = np.linalg.eigh(np.cov((points - c).T))
    axis = v[:, 0]
    # deterministic sign: largest-magnitude component positive
    if axis[np.argmax(np.abs(axis))] < 0:
        axis = -axis
    extent = float(np.sqrt(max(w[-1], 1e-300)))
    return c + axis * 10.0 * max(extent, 1.0)


def _local_pca(points: np.ndarray, neighbors: np.ndarray):
    """Eigen-decomposition of every neighbourhood covariance (ascending)."""
    nb = points[neighbors]
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("mki,mkj->mij", centered, centered) / neighbors.shape[1]
    return np.linalg.eigh(cov)


def estimate_normals(
    cloud: PointCloud,
    k_neighbors: int = 10,
    viewpoint=None,
    orient_like: np.ndarray | None = None,
) -> PointCloud:
    """PCA normals from the ``k_neighbors`` nearest points (self included).

    Each normal is flipped toward ``viewpoint`` or, when ``orient_like`` is
    given, into the hemisphere of the matching row of ``orient_like``.
    Rank-deficient neighbourhoods get a NaN (unset) normal.
    """
    if k_neighbors < 3:
        raise ValueError("k_neighbors must be >= 3")
    m = len(cloud)
    if m <= k_neighbors:
        raise ValueError(f"need more than {k_neighbors} points, got {m}")
    pts = cloud.points
    _, nbr = cloud.kdtree.query(pts, k=k_neighbors)
    w, v = _local_pca(pts, nbr)
    normals = v[:, :, 0].copy()

    # rank < 2: second eigenvalue vanishes relative to the largest
    scale = np.maximum(w[:, 2], 1e-300)
    degenerate = w[:, 1] <= 1e-12 * scale
    if orient_like is not None:
        ref = np.asarray(orient_like, dtype=np.float64)
        flip = np.einsum("ij,ij->i", normals, ref) < 0
    else:
        vp = default_viewpoint(pts) if viewpoint is None else np.asarray(viewpoint, float)
        flip = np.einsum("ij,ij->i", normals, vp - pts) < 0
    normals[flip] *= -1.0
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    normals[degenerate] = np.nan
    return cloud.with_normals(normals)


def surface_variation(cloud: PointCloud, k_neighbors: int = 10) -> np.ndarray:
    """Per-point curvature proxy ``λ_min / (λ0 + λ1 + λ2)`` of the local PCA."""
    k = min(k_neighbors, len(cloud))
    _, nbr = cloud.kdtree.query(cloud.points, k=k)
    w, _ = _local_pca(cloud.points, nbr.reshape(len(cloud), -1))
    total = w.sum(axis=1)
    out = np.zeros(len(cloud))
    ok = total > 0
    out[ok] = np.clip(w[ok, 0], 0.0, None) / total[ok]
    return out


def apply_transform(cloud: PointCloud, t: RigidTransform) -> PointCloud:
    normals = None if cloud.normals is None else cloud.normals @ t.rotation.T
    return PointCloud(t.apply(cloud.points), normals, cloud.source_id)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation matrix (QR of a Gaussian matrix)."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotation_about(axis, angle_deg: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle_deg`` degrees."""
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    th = np.radians(angle_deg)
    k = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + np.sin(th) * k + (1 - np.cos(th)) * (k @ k)
