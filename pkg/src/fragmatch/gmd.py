"""Gaussian mixture descriptors of local surface patches.

A patch is expressed in its local reference frame, split into convex and
concave regions, and each region is modelled by a Gaussian mixture whose
component count comes from x-means and whose parameters come from EM. The
regional mixtures are merged with weights proportional to region size.
"""
from __future__ import annotations

import csv
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .keypoints import MIN_PATCH_SIZE, extract_patch
from .lrf import LRF, compute_lrf, to_local_frame
from .pointcloud import PointCloud
from .regions import CONCAVE, CONVEX, classify_concavity, extract_edge_points, fit_plane

log = logging.getLogger(__name__)

__all__ = [
    "GMM",
    "GMD",
    "EMState",
    "ClusterSet",
    "DescriptorParams",
    "DescriptorError",
    "EMCollapse",
    "gaussian_logpdf",
    "gmm_pdf",
    "gmm_loglik",
    "run_xmeans",
    "em_fit",
    "build_regional_gmd",
    "merge_gmd",
    "compute_gmd",
    "describe_keypoints",
    "write_gmd_bin",
    "read_gmd_bin",
    "write_gmd_csv",
]

_LOG2PI = np.log(2.0 * np.pi)


class EMCollapse(RuntimeError):
    pass


class DescriptorError(ValueError):
    """A keypoint could not be described; ``reason`` is a short code."""

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


@dataclass(frozen=True, eq=False)
class GMM:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.asarray(self.means, dtype=np.float64).reshape(-1, 3)
        cov = np.asarray(self.covariances, dtype=np.float64).reshape(-1, 3, 3)
        if not (len(w) == len(mu) == len(cov)) or len(w) == 0:
            raise ValueError("weights, means and covariances disagree on k")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"weights must be non-negative and sum to 1 (sum={w.sum()!r})")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "covariances", cov)

    @property
    def k(self) -> int:
        return len(self.weights)


@dataclass(frozen=True, eq=False)
class GMD:
    mixture: GMM
    k1: int  # convex components, stored first
    k2: int  # concave components
    E_conv: int
    E_conc: int
    lrf: LRF | None = None
    keypoint: int = -1

    @property
    def E(self) -> int:
        return self.E_conv + self.E_conc

    def to_vector(self) -> np.ndarray:
        """Flat layout: k weights, 3k means, 9k covariances (row-major)."""
        m = self.mixture
        return np.concatenate([m.weights, m.means.ravel(), m.covariances.ravel()])


@dataclass
class EMState:
    responsibilities: np.ndarray
    Nk: np.ndarray
    log_likelihood: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    pruned: int = 0


@dataclass
class ClusterSet:
    centers: np.ndarray
    assignments: np.ndarray
    covariances: np.ndarray

    @property
    def k(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class DescriptorParams:
    radius_mult: float = 6.0
    k_max: int = 8
    tau: float = 1e-6
    max_iters: int = 200
    min_patch: int = MIN_PATCH_SIZE
    min_region: int = 20
    cov_floor_mult: float = 0.01
    concavity_mode: str = "normal"
    edge_k: int = 10


# ---------------------------------------------------------------- densities


def _floor_cov(cov: np.ndarray, min_var: float) -> np.ndarray:
    """Clamp eigenvalues from below; this is the constrained Gaussian MLE."""
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, min_var)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def gaussian_logpdf(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """``log φ(x_n | μ_k, Σ_k)`` for all n, k; shape ``(N, K)``."""
    x = np.atleast_2d(x)
    chol = np.linalg.cholesky(covs)  # (K, 3, 3)
    diff = x[None, :, :] - means[:, None, :]  # (K, N, 3)
    sol = np.linalg.solve(chol, np.swapaxes(diff, 1, 2))  # (K, 3, N)
    maha = np.sum(sol**2, axis=1)  # (K, N)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    return (-0.5 * (maha + logdet[:, None] + 3 * _LOG2PI)).T


def gmm_pdf(mixture: GMM, x) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    lp = gaussian_logpdf(x.reshape(-1, 3), mixture.means, mixture.covariances)
    p = np.exp(lp) @ mixture.weights
    return float(p[0]) if x.ndim == 1 else p


def _log_resp(points, weights, means, covs):
    lp = gaussian_logpdf(points, means, covs)
    with np.errstate(divide="ignore"):
        lp = lp + np.log(weights)[None, :]
    mx = lp.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(lp - mx).sum(axis=1))
    return lp - lse[:, None], float(lse.sum())


def gmm_loglik(mixture: GMM, points) -> float:
    return _log_resp(np.atleast_2d(points), mixture.weights, mixture.means, mixture.covariances)[1]


# ------------------------------------------------------------------ x-means


def _kmeans(points, centers, iters):
    centers = centers.copy()
    assign = np.zeros(len(points), dtype=np.intp)
    for it in range(iters):
        d2 = ((points[:, None, :] - centers[None]) ** 2).sum(-1)
        new = np.argmin(d2, axis=1)
        for j in range(len(centers)):
            sel = new == j
            if sel.any():
                centers[j] = points[sel].mean(axis=0)
        if it > 0 and np.array_equal(new, assign):
            break
        assign = new
    d2 = ((points[:, None, :] - centers[None]) ** 2).sum(-1)
    return centers, np.argmin(d2, axis=1)


def _axis_split(pts, min_size):
    """Seeds for a 2-split: the means of both sides of the best cut along
    the principal axis (least within-side squared error, exact 1D scan)."""
    c = pts.mean(axis=0)
    _, v = np.linalg.eigh(np.cov(pts.T, bias=True))
    order = np.argsort((pts - c) @ v[:, -1], kind="stable")
    proj = ((pts - c) @ v[:, -1])[order]
    n = len(proj)
    left = np.cumsum(proj)[:-1]
    n_left = np.arange(1, n)
    # between-side sum of squares; the 1D mean is 0
    score = left**2 / n_left + left**2 / (n - n_left)
    valid = (n_left >= min_size) & (n - n_left >= min_size)
    cut = int(np.argmax(np.where(valid, score, -np.inf))) + 1 if valid.any() else n // 2
    return np.vstack([pts[order[:cut]].mean(axis=0), pts[order[cut:]].mean(axis=0)])


def _cluster_loglik(pts, n_total, min_var):
    n = len(pts)
    mu = pts.mean(axis=0)
    cov = _floor_cov(np.cov(pts.T, bias=True).reshape(3, 3), min_var)
    lp = gaussian_logpdf(pts, mu[None], cov[None])[:, 0]
    return n * np.log(n / n_total) + lp.sum()


def _bic(groups, min_var):
    n = sum(len(g) for g in groups)
    ll = sum(_cluster_loglik(g, n, min_var) for g in groups)
    p = len(groups) * (1 + 3 + 6) - 1
    return ll - 0.5 * p * np.log(n)


def run_xmeans(
    points,
    k_max: int = 8,
    seed: int = 0,
    min_var: float = 1e-10,
    refine_iters: int = 10,
    min_cluster: int = 10,
) -> ClusterSet:
    """Cluster count by recursive BIC-tested 2-splits, starting from k = 1.

    Each cluster is cut at the best point along its principal axis and
    refined with 2-means;
    the split is kept when the two-Gaussian BIC beats the one-Gaussian BIC on
    that cluster's points. Children smaller than ``min_cluster`` are not
    considered. Splits are initialised deterministically, so the result never
    varies with ``seed``; it is kept so callers can thread per-keypoint seeds.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2:
        raise ValueError("x-means needs at least 2 points")
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    centers = pts.mean(axis=0, keepdims=True)
    assign = np.zeros(len(pts), dtype=np.intp)

    while len(centers) < k_max:
        new_centers = []
        n_split = 0
        for j in range(len(centers)):
            cpts = pts[assign == j]
            if len(cpts) == 0:
                continue
            budget = len(centers) + n_split < k_max
            if budget and len(cpts) >= 2 * min_cluster:
                kids, lab = _kmeans(cpts, _axis_split(cpts, min_cluster), refine_iters)
                sizes = np.bincount(lab, minlength=2)
                if sizes.min() >= min_cluster:
                    if _bic([cpts[lab == 0], cpts[lab == 1]], min_var) > _bic([cpts], min_var):
                        new_centers.extend(kids)
                        n_split += 1
                        continue
            new_centers.append(centers[j])
        if n_split == 0:
            break
        centers, assign = _kmeans(pts, np.asarray(new_centers), refine_iters)
        # drop clusters emptied by the global refinement
        used = np.unique(assign)
        centers = centers[used]
        assign = np.searchsorted(used, assign)

    covs = np.stack([
        _floor_cov(np.cov(pts[assign == j].T, bias=True).reshape(3, 3), min_var)
        for j in range(len(centers))
    ])
    return ClusterSet(centers=np.asarray(centers), assignments=assign, covariances=covs)


# ----------------------------------------------------------------------- EM


def em_fit(
    points,
    init: ClusterSet,
    tau: float = 1e-6,
    max_iters: int = 200,
    min_var: float = 1e-10,
    min_count: float = 1e-3,
) -> tuple[GMM, EMState]:
    """Expectation-maximisation from an x-means initialisation.

    Means start at the cluster centres, covariances at the cluster sample
    covariances and weights at the cluster size fractions. Iteration stops
    once the log-likelihood changes by less than ``tau`` relative to its
    magnitude. A component whose effective count drops below ``min_count``
    is pruned (the likelihood history restarts after a prune).
    """
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(x)
    if n < 3 * init.k:
        raise ValueError(f"{n} points are too few for {init.k} components")
    means = np.asarray(init.centers, dtype=np.float64).copy()
    covs = _floor_cov(np.asarray(init.covariances, dtype=np.float64), min_var)
    counts = np.bincount(init.assignments, minlength=init.k).astype(np.float64)
    weights = counts / counts.sum()

    log_r, ll = _log_resp(x, weights, means, covs)
    history = [ll]
    pruned = 0
    it = 0
    for it in range(1, max_iters + 1):
        resp = np.exp(log_r)
        Nk = resp.sum(axis=0)
        dead = Nk < min_count
        if dead.any():
            if dead.all():
                raise EMCollapse("all mixture components collapsed")
            log.warning("pruning %d collapsed EM component(s)", int(dead.sum()))
            pruned += int(dead.sum())
            keep = ~dead
            resp, Nk, means, covs = resp[:, keep], Nk[keep], means[keep], covs[keep]
        means = (resp.T @ x) / Nk[:, None]
        diff = x[None, :, :] - means[:, None, :]
        covs = np.einsum("kn,kni,knj->kij", resp.T, diff, diff) / Nk[:, None, None]
        covs = _floor_cov(covs, min_var)
        weights = Nk / Nk.sum()
        log_r, ll_new = _log_resp(x, weights, means, covs)
        if dead.any():
            history = [ll_new]
        else:
            history.append(ll_new)
        converged = abs(ll_new - ll) < tau * max(abs(ll_new), 1.0)
        ll = ll_new
        if converged and not dead.any():
            break

    resp = np.exp(log_r)
    weights = weights / weights.sum()
    state = EMState(resp, resp.sum(axis=0), ll, history, it, pruned)
    return GMM(weights, means, covs), state


# -------------------------------------------------------------- descriptors


def build_regional_gmd(
    points,
    k_max: int = 8,
    tau: float = 1e-6,
    seed: int = 0,
    min_var: float = 1e-10,
    max_iters: int = 200,
    min_size: int = 20,
) -> GMM | None:
    """x-means then EM on one region; ``None`` for regions below ``min_size``."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < min_size:
        if len(pts):
            log.warning("dropping region of %d points (< %d)", len(pts), min_size)
        return None
    init = run_xmeans(pts, k_max=k_max, seed=seed, min_var=min_var)
    mixture, _ = em_fit(pts, init, tau=tau, max_iters=max_iters, min_var=min_var)
    return mixture


def merge_gmd(
    conc: GMM | None,
    conv: GMM | None,
    E_conc: int,
    E_conv: int,
    lrf: LRF | None = None,
    keypoint: int = -1,
) -> GMD:
    """Concatenate the regional mixtures, scaling weights by region share.

    Convex components come first. An absent region contributes nothing.
    """
    if conc is None and conv is None:
        raise ValueError("at least one regional mixture is required")
    parts, scale = [], []
    e_conv = E_conv if conv is not None else 0
    e_conc = E_conc if conc is not None else 0
    total = e_conv + e_conc
    for g, e in ((conv, e_conv), (conc, e_conc)):
        if g is not None:
            parts.append(g)
            scale.append(e / total if total > 0 else 1.0 / (len([p for p in (conv, conc) if p])))
    w = np.concatenate([g.weights * s for g, s in zip(parts, scale)])
    w = w / w.sum()
    mu = np.concatenate([g.means for g in parts])
    cov = np.concatenate([g.covariances for g in parts])
    return GMD(
        GMM(w, mu, cov),
        k1=conv.k if conv is not None else 0,
        k2=conc.k if conc is not None else 0,
        E_conv=int(e_conv),
        E_conc=int(e_conc),
        lrf=lrf,
        keypoint=keypoint,
    )


def compute_gmd(
    cloud: PointCloud,
    keypoint: int,
    R: float,
    resolution: float,
    params: DescriptorParams | None = None,
    seed: int = 0,
) -> GMD:
    """Describe the patch around ``keypoint``.

    Raises :class:`DescriptorError` with a reason code when a stage fails.
    """
    params = params or DescriptorParams()
    stage = "patch"
    try:
        patch = extract_patch(cloud, keypoint, R, min_size=params.min_patch)
        stage = "lrf"
        lrf = compute_lrf(cloud, patch)
        local = to_local_frame(cloud, patch, lrf)
        stage = "plane"
        edges = extract_edge_points(cloud, patch, k=params.edge_k)
        plane = fit_plane(cloud, edges, orient_like=lrf.z_axis)
        stage = "concavity"
        labels = classify_concavity(cloud, patch, plane, mode=params.concavity_mode)
    except ValueError as exc:
        raise DescriptorError(stage, str(exc)) from None

    conv_pts = local[labels == CONVEX]
    conc_pts = local[labels == CONCAVE]
    # a region too small for EM joins the other one
    if len(conc_pts) < params.min_region:
        conv_pts, conc_pts = local, local[:0]
    elif len(conv_pts) < params.min_region:
        conv_pts, conc_pts = conv_pts[:0], local

    min_var = (params.cov_floor_mult * resolution) ** 2
    ss = np.random.SeedSequence([seed, int(keypoint)])
    seeds = ss.generate_state(2)
    try:
        conv = build_regional_gmd(conv_pts, params.k_max, params.tau, int(seeds[0]), min_var,
                                  params.max_iters, params.min_region)
        conc = build_regional_gmd(conc_pts, params.k_max, params.tau, int(seeds[1]), min_var,
                                  params.max_iters, params.min_region)
        return merge_gmd(conc, conv, len(conc_pts), len(conv_pts), lrf, int(keypoint))
    except (ValueError, EMCollapse) as exc:
        raise DescriptorError("em", str(exc)) from None


def describe_keypoints(
    cloud: PointCloud,
    keypoints,
    R: float,
    resolution: float,
    params: DescriptorParams | None = None,
    seed: int = 0,
    threads: int = 1,
) -> tuple[list[GMD], dict[int, str]]:
    """Descriptors for every keypoint that survives; skipped ones map to reasons.

    Output order follows ``keypoints`` and does not depend on ``threads``.
    """
    def one(kp):
        try:
            return compute_gmd(cloud, int(kp), R, resolution, params, seed)
        except DescriptorError as exc:
            return exc

    kps = [int(k) for k in keypoints]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, kps))
    else:
        results = [one(k) for k in kps]
    good, skipped = [], {}
    for kp, res in zip(kps, results):
        if isinstance(res, DescriptorError):
            skipped[kp] = res.reason
        else:
            good.append(res)
    return good, skipped


# ------------------------------------------------------------ serialization

_MAGIC = b"GMD1"
_REC = struct.Struct("<qiiqq")


def write_gmd_bin(path, descriptors) -> None:
    """Binary sidecar: magic, uint32 count, then per keypoint the header
    ``(index, k1, k2, E_conc, E_conv)`` followed by ``13k`` float64 values."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(descriptors)))
        for d in descriptors:
            fh.write(_REC.pack(d.keypoint, d.k1, d.k2, d.E_conc, d.E_conv))
            fh.write(d.to_vector().astype("<f8").tobytes())


def read_gmd_bin(path) -> list[GMD]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError(f"{path}: not a GMD sidecar")
    (count,) = struct.unpack_from("<I", data, 4)
    off = 8
    out = []
    for _ in range(count):
        kp, k1, k2, e_conc, e_conv = _REC.unpack_from(data, off)
        off += _REC.size
        k = k1 + k2
        vec = np.frombuffer(data, dtype="<f8", count=13 * k, offset=off)
        off += 8 * 13 * k
        mix = GMM(vec[:k], vec[k:4 * k].reshape(k, 3), vec[4 * k:].reshape(k, 3, 3))
        out.append(GMD(mix, k1, k2, E_conv=e_conv, E_conc=e_conc, keypoint=kp))
    return out


def write_gmd_csv(path, descriptors) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["keypoint", "k1", "k2", "E_conc", "E_conv", "values"])
        for d in descriptors:
            vals = " ".join(repr(float(v)) for v in d.to_vector())
            w.writerow([d.keypoint, d.k1, d.k2, d.E_conc, d.E_conv, vals])
