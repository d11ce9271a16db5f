"""Synthetic fractured-surface pairs with known ground truth, plus degradations."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.spatial import cKDTree

from .pointcloud import (
    PointCloud,
    RigidTransform,
    apply_transform,
    estimate_normals,
    random_rotation,
)

__all__ = [
    "SynthConfig",
    "GroundTruth",
    "heightfield",
    "generate_fragment_pair",
    "ground_truth_pairs",
    "add_gaussian_noise",
    "apply_abrasion",
    "downsample",
    "write_ground_truth",
    "read_ground_truth",
]


@dataclass(frozen=True)
class SynthConfig:
    """A bumpy heightfield sampled on a jittered grid.

    ``jitter`` is the half-width of the uniform in-plane perturbation as a
    fraction of ``spacing``; each cloud draws its own jitter. A ``transform``
    of ``None`` plants a random rotation (from ``seed``) and a fixed offset.
    """

    extent: float = 70.0
    spacing: float = 1.0
    jitter: float = 0.25
    n_bumps: int = 24
    amplitude: tuple = (2.0, 5.0)
    width: tuple = (3.0, 7.0)
    overlap_fraction: float = 1.0
    transform: RigidTransform | None = None
    seed: int = 0

    def __post_init__(self):
        if self.spacing <= 0 or self.extent <= 0:
            raise ValueError("extent and spacing must be positive")
        if not 0 < self.overlap_fraction <= 1:
            raise ValueError("overlap_fraction must lie in (0, 1]")
        if not 0 <= self.jitter < 0.5:
            raise ValueError("jitter must lie in [0, 0.5)")


@dataclass
class GroundTruth:
    transform: RigidTransform
    overlap_mask: np.ndarray
    pairs: set = field(default_factory=set)


def _bumps(cfg: SynthConfig, rng):
    centers = rng.uniform(0, cfg.extent, size=(cfg.n_bumps, 2))
    amp = rng.uniform(*cfg.amplitude, size=cfg.n_bumps) * rng.choice([-1.0, 1.0], cfg.n_bumps)
    width = rng.uniform(*cfg.width, size=cfg.n_bumps)
    return centers, amp, width


def heightfield(xy: np.ndarray, bumps) -> tuple[np.ndarray, np.ndarray]:
    """Heights and unit normals ``(-h_x, -h_y, 1)/|.|`` of a sum of Gaussian bumps."""
    centers, amp, width = bumps
    d = xy[:, None, :] - centers[None]
    g = amp * np.exp(-0.5 * np.sum(d**2, axis=2) / width**2)
    h = g.sum(axis=1)
    grad = -np.einsum("nb,nbi->ni", g / width**2, d)
    n = np.column_stack([-grad, np.ones(len(xy))])
    return h, n / np.linalg.norm(n, axis=1, keepdims=True)


def _sample(cfg: SynthConfig, x_max: float, rng, bumps, source_id):
    xs = np.arange(0.0, x_max + 1e-9, cfg.spacing)
    ys = np.arange(0.0, cfg.extent + 1e-9, cfg.spacing)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    if cfg.jitter > 0:
        xy = xy + rng.uniform(-cfg.jitter, cfg.jitter, size=xy.shape) * cfg.spacing
    h, n = heightfield(xy, bumps)
    return PointCloud(np.column_stack([xy, h]), n, source_id)


def generate_fragment_pair(config: SynthConfig):
    """Return ``(A, B, truth)`` where ``B = truth.transform(A ∩ overlap)``
    up to independent resampling."""
    root = np.random.SeedSequence(config.seed)
    s_bumps, s_a, s_b, s_t = (np.random.default_rng(s) for s in root.spawn(4))
    bumps = _bumps(config, s_bumps)
    a = _sample(config, config.extent, s_a, bumps, "A")
    x_cut = config.overlap_fraction * config.extent
    b_local = _sample(config, x_cut, s_b if config.jitter > 0 else s_a, bumps, "B")
    if config.transform is None:
        t = RigidTransform(random_rotation(s_t), s_t.uniform(-20, 20, size=3))
    else:
        t = config.transform
    b = apply_transform(b_local, t)
    mask = a.points[:, 0] <= x_cut + 1e-9
    return a, b, GroundTruth(t, mask)


def ground_truth_pairs(src_pts, dst_pts, transform: RigidTransform, tol: float) -> set:
    """Every pair ``(i, j)`` whose mapped src keypoint lies within ``tol`` of
    dst keypoint ``j``. Both arguments are ``(indices, positions)`` tuples."""
    (si, sp), (di, dp) = src_pts, dst_pts
    if len(di) == 0 or len(si) == 0:
        return set()
    hits = cKDTree(np.asarray(dp, float)).query_ball_point(transform.apply(sp), tol)
    return {(int(si[a]), int(di[b])) for a, js in enumerate(hits) for b in js}


def add_gaussian_noise(cloud: PointCloud, sigma: float, seed: int = 0, k_neighbors: int = 10):
    """Isotropic per-coordinate noise; normals are re-estimated and kept on
    the side of the original normals when there were any."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return PointCloud(cloud.points.copy(), None if cloud.normals is None
                          else cloud.normals.copy(), cloud.source_id)
    rng = np.random.default_rng(seed)
    noisy = PointCloud(cloud.points + rng.normal(0.0, sigma, size=cloud.points.shape),
                       None, cloud.source_id)
    ref = None
    if cloud.normals is not None:
        ref = np.nan_to_num(cloud.normals)
    return estimate_normals(noisy, k_neighbors, orient_like=ref)


def apply_abrasion(cloud: PointCloud, n_defects: int, defect_radius: float, seed: int = 0):
    """Remove every point within ``defect_radius`` of ``n_defects`` random
    cloud points. For a fixed seed the defect set for ``n`` is a prefix of
    the set for ``n + 1``."""
    if n_defects < 0:
        raise ValueError("n_defects must be non-negative")
    if n_defects == 0:
        return cloud.subset(np.arange(len(cloud)))
    rng = np.random.default_rng(seed)
    centers = cloud.points[rng.permutation(len(cloud))[:n_defects]]
    d, _ = cKDTree(centers).query(cloud.points)
    keep = np.flatnonzero(d >= defect_radius)
    if len(keep) == 0:
        raise ValueError("abrasion would remove every point")
    return cloud.subset(keep)


def downsample(cloud: PointCloud, keep_fraction: float, seed: int = 0):
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    n_keep = math.ceil(keep_fraction * len(cloud))
    if n_keep < 2:
        raise ValueError("downsampling would leave fewer than 2 points")
    if n_keep == len(cloud):
        return cloud.subset(np.arange(len(cloud)))
    rng = np.random.default_rng(seed)
    return cloud.subset(np.sort(rng.choice(len(cloud), n_keep, replace=False)))


def write_ground_truth(path, truth: GroundTruth, config: SynthConfig | None = None) -> None:
    """4x4 matrix (4 rows) followed by ``key = value`` lines echoing the config."""
    with open(path, "w") as fh:
        for row in truth.transform.matrix():
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        if config is not None:
            for f in fields(config):
                if f.name == "transform":
                    continue
                fh.write(f"{f.name} = {getattr(config, f.name)!r}\n")


def read_ground_truth(path) -> RigidTransform:
    with open(path) as fh:
        rows = [next(fh).split() for _ in range(4)]
    return RigidTransform.from_matrix(np.array(rows, dtype=np.float64))
