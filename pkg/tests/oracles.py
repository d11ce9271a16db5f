"""Slow, obviously-correct reference computations used by the tests.

None of these share code with the package; they are brute force on purpose.
"""
import numpy as np
from scipy.stats import multivariate_normal


def brute_resolution(pts):
    d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1).mean()


def brute_radius(pts, center, radius):
    return np.flatnonzero(np.linalg.norm(pts - center, axis=1) < radius)


def mixture_density(weights, means, covs, x):
    out = np.zeros(len(x))
    for w, m, c in zip(weights, means, covs):
        out += w * multivariate_normal(m, c).pdf(x)
    return out


def grid(lo, hi, n):
    ax = np.linspace(lo, hi, n)
    cell = (ax[1] - ax[0]) ** 3
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g, cell


def riemann_l2(p, q, lo=-12.0, hi=12.0, n=121):
    """``∫ (p - q)^2`` on a cube by the midpoint-ish rule; p, q are (w, mu, cov)."""
    g, cell = grid(lo, hi, n)
    diff = mixture_density(*p, g) - mixture_density(*q, g)
    return float(np.sum(diff**2) * cell)


def riemann_mass(p, lo=-12.0, hi=12.0, n=81):
    g, cell = grid(lo, hi, n)
    return float(np.sum(mixture_density(*p, g)) * cell)


def kabsch_svd(s, d):
    """Reference rigid fit written from scratch (Umeyama without scale)."""
    ms, md = s.mean(0), d.mean(0)
    h = (s - ms).T @ (d - md)
    u, _, vt = np.linalg.svd(h)
    sgn = np.sign(np.linalg.det(vt.T @ u.T))
    rot = vt.T @ np.diag([1, 1, sgn]) @ u.T
    return rot, md - rot @ ms


def plane_grid(n=10, spacing=1.0, z=0.0):
    xs = np.arange(n) * spacing
    g = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2)
    return np.column_stack([g, np.full(len(g), z)])


def random_rotation(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def brute_poc(big, small, normal, offset, chi):
    """Projection + exhaustive coverage count, independent of the package."""
    n = normal / np.linalg.norm(normal)
    pb = big - np.outer(big @ n + offset, n)
    ps = small - np.outer(small @ n + offset, n)
    hit = 0
    for p in ps:
        if np.min(np.linalg.norm(pb - p, axis=1)) < chi:
            hit += 1
    return 100.0 * hit / len(ps)
