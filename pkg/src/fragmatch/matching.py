"""L2 distance between Gaussian mixtures and descriptor correspondence search."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .gmd import GMD, GMM

__all__ = [
    "Correspondence",
    "MatchDecision",
    "l2_distance",
    "distance_matrix",
    "adaptive_thresholds",
    "match_descriptors",
    "decide_surface_pair",
    "write_correspondences_csv",
    "read_correspondences_csv",
]

_NORM3 = (2.0 * np.pi) ** -1.5


@dataclass(frozen=True)
class Correspondence:
    source_keypoint: int
    target_keypoint: int
    distance: float


@dataclass
class MatchDecision:
    correspondences: list
    aggregate_distance: float
    accepted: bool
    zeta: float
    psi: float
    min_count: int = 3
    candidates: list = field(default_factory=list)


def _mixture(x) -> GMM:
    return x.mixture if isinstance(x, GMD) else x


def _gauss_at_zero(diff: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """``φ(0 | diff, cov)`` for stacks of 3-vectors and 3x3 matrices."""
    a, b, c = cov[..., 0, 0], cov[..., 0, 1], cov[..., 0, 2]
    d, e, f = cov[..., 1, 1], cov[..., 1, 2], cov[..., 2, 2]
    # adjugate of the symmetric matrix
    A = d * f - e * e
    B = c * e - b * f
    C = b * e - c * d
    D = a * f - c * c
    E = b * c - a * e
    F = a * d - b * b
    det = a * A + b * B + c * C
    x, y, z = diff[..., 0], diff[..., 1], diff[..., 2]
    quad = (A * x * x + D * y * y + F * z * z + 2 * (B * x * y + C * x * z + E * y * z)) / det
    return _NORM3 * np.exp(-0.5 * quad) / np.sqrt(det)


def _cross_term(p: GMM, q: GMM) -> float:
    diff = p.means[:, None, :] - q.means[None, :, :]
    cov = p.covariances[:, None] + q.covariances[None, :]
    g = _gauss_at_zero(diff, cov)
    return float(p.weights @ g @ q.weights)


def l2_distance(a, b) -> float:
    """``∫ (p_a - p_b)^2 dx`` in closed form."""
    p, q = _mixture(a), _mixture(b)
    # an integral of a square; clamp cancellation noise
    return max(0.0, _cross_term(p, p) + _cross_term(q, q) - 2.0 * _cross_term(p, q))


def _stack(descs):
    mixes = [_mixture(d) for d in descs]
    owner = np.repeat(np.arange(len(mixes)), [m.k for m in mixes])
    w = np.concatenate([m.weights for m in mixes])
    mu = np.concatenate([m.means for m in mixes])
    cov = np.concatenate([m.covariances for m in mixes])
    return mixes, owner, w, mu, cov


def _block_sum(owner_a, wa, owner_b, wb, g, n_a, n_b):
    """Sum of ``w_a w_b g`` within every (descriptor, descriptor) block."""
    pa = sparse.csr_matrix((wa, (owner_a, np.arange(len(wa)))), shape=(n_a, len(wa)))
    pb = sparse.csr_matrix((wb, (owner_b, np.arange(len(wb)))), shape=(n_b, len(wb)))
    return np.asarray((pb @ (pa @ g).T).T)


def distance_matrix(source, target, chunk: int = 512) -> np.ndarray:
    """Pairwise L2 distances, shape ``(len(source), len(target))``."""
    ms, os_, ws, mus, covs = _stack(source)
    mt, ot, wt, mut, covt = _stack(target)
    self_s = np.array([_cross_term(m, m) for m in ms])
    self_t = np.array([_cross_term(m, m) for m in mt])
    cross = np.zeros((len(ms), len(mt)))
    for lo in range(0, len(ws), chunk):
        hi = min(lo + chunk, len(ws))
        g = _gauss_at_zero(mus[lo:hi, None, :] - mut[None], covs[lo:hi, None] + covt[None])
        cross += _block_sum(os_[lo:hi], ws[lo:hi], ot, wt, g, len(ms), len(mt))
    return np.maximum(self_s[:, None] + self_t[None, :] - 2.0 * cross, 0.0)


def adaptive_thresholds(D: np.ndarray, zeta_factor: float = 0.6, psi_factor: float = 0.8):
    """``zeta`` as a fraction of the median candidate distance, ``psi`` of ``zeta``."""
    zeta = zeta_factor * float(np.median(D))
    return zeta, psi_factor * zeta


def match_descriptors(
    source,
    target,
    zeta: float | None = None,
    ratio: float = 0.9,
    D: np.ndarray | None = None,
    zeta_factor: float = 0.6,
) -> list[Correspondence]:
    """Correspondences with distance below ``zeta`` that are mutual nearest
    neighbours and pass the ratio test in both directions.

    ``zeta=None`` picks the adaptive threshold. Sorted by ascending distance.
    """
    if not source or not target:
        raise ValueError("both descriptor lists must be non-empty")
    if D is None:
        D = distance_matrix(source, target)
    if zeta is None:
        zeta = adaptive_thresholds(D, zeta_factor)[0]
    best_t = np.argmin(D, axis=1)
    best_s = np.argmin(D, axis=0)

    def passes_ratio(vals, best):
        if len(vals) < 2:
            return True
        second = np.partition(vals, 1)[1]
        return best < ratio * second

    out = []
    for i, j in enumerate(best_t):
        d = D[i, j]
        if not d < zeta or best_s[j] != i:
            continue
        if not (passes_ratio(D[i], d) and passes_ratio(D[:, j], d)):
            continue
        out.append(Correspondence(_kp(source[i], i), _kp(target[j], j), float(d)))
    out.sort(key=lambda c: (c.distance, c.source_keypoint, c.target_keypoint))
    return out


def _kp(desc, fallback):
    kp = getattr(desc, "keypoint", -1)
    return int(kp) if kp >= 0 else int(fallback)


def decide_surface_pair(
    correspondences, psi: float, min_count: int = 3, zeta: float = float("nan")
) -> MatchDecision:
    """Accept when at least ``min_count`` matches exist and their mean distance is below ``psi``."""
    if correspondences:
        agg = float(np.mean([c.distance for c in correspondences]))
    else:
        agg = float("inf")
    ok = len(correspondences) >= min_count and agg < psi
    return MatchDecision(list(correspondences), agg, bool(ok), zeta, psi, min_count)


def write_correspondences_csv(path, correspondences) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["source_idx", "target_idx", "distance"])
        for c in correspondences:
            w.writerow([c.source_keypoint, c.target_keypoint, repr(float(c.distance))])


def read_correspondences_csv(path) -> list[Correspondence]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Correspondence(int(r["source_idx"]), int(r["target_idx"]), float(r["distance"]))
            for r in rows]
