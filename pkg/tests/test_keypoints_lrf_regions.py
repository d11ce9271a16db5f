import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragmatch.keypoints import InsufficientSupport, SurfacePatch, detect_keypoints, extract_patch
from fragmatch.lrf import DegenerateFrame, compute_lrf, patch_covariance, to_local_frame
from fragmatch.pointcloud import (
    PointCloud,
    RigidTransform,
    apply_transform,
    compute_resolution,
    estimate_normals,
    random_rotation,
)
from fragmatch.regions import (
    CONCAVE,
    CONVEX,
    classify_concavity,
    extract_edge_points,
    fit_plane,
)
from fragmatch.pointcloud import Plane
from fragmatch.synth import SynthConfig, generate_fragment_pair

from oracles import brute_radius, plane_grid

seeds = st.integers(0, 2**32 - 1)


def bump_cloud(n=41, amp=3.0, width=3.0):
    xs = np.arange(n) - n // 2
    g = np.stack(np.meshgrid(xs, xs, indexing="ij"), -1).reshape(-1, 2).astype(float)
    z = amp * np.exp(-0.5 * np.sum(g**2, axis=1) / width**2)
    return estimate_normals(PointCloud(np.column_stack([g, z])), viewpoint=[0, 0, 100])


@pytest.fixture(scope="module")
def fragment():
    a, _, _ = generate_fragment_pair(SynthConfig(seed=4, extent=40))
    return a, compute_resolution(a)


# --- keypoints


def test_plane_has_no_keypoints():
    assert len(detect_keypoints(PointCloud(plane_grid(30)))) == 0


def test_bump_apex_is_detected():
    c = bump_cloud()
    r = compute_resolution(c)
    kps = detect_keypoints(c, resolution=r)
    d = np.linalg.norm(c.points[kps, :2], axis=1)
    assert len(kps) >= 1 and d.min() <= 2 * r


def test_keypoints_rigid_equivariant(fragment):
    a, r = fragment
    t = RigidTransform(random_rotation(np.random.default_rng(0)), [5.0, -3.0, 2.0])
    k0 = detect_keypoints(a, resolution=r)
    k1 = detect_keypoints(apply_transform(a, t), resolution=r)
    p0 = t.apply(a.points[k0])
    p1 = t.apply(a.points[k1])
    # same point set, each within one resolution of a counterpart
    from scipy.spatial import cKDTree
    d, _ = cKDTree(p1).query(p0)
    assert np.mean(d <= r) >= 0.99
    assert abs(len(k0) - len(k1)) <= 0.01 * len(k0) + 1


def test_keypoints_sorted_by_response(fragment):
    a, r = fragment
    idx, resp = detect_keypoints(a, resolution=r, return_response=True)
    assert np.all(np.diff(resp) <= 0)
    assert len(np.unique(idx)) == len(idx)


def test_patch_too_small():
    c = PointCloud(plane_grid(10))
    with pytest.raises(InsufficientSupport):
        extract_patch(c, 55, 0.5, min_size=2)


def test_patch_grid_enumeration():
    c = PointCloud(plane_grid(10))
    assert len(extract_patch(c, 55, 1.2, min_size=1)) == 5
    # diagonals at sqrt(2) fall inside R = 1.5
    assert len(extract_patch(c, 55, 1.5, min_size=1)) == 9


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.5, 3.0))
def test_patch_membership_brute_force(seed, R):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-3, 3, (200, 3))
    p = extract_patch(PointCloud(pts), 0, R, min_size=1)
    np.testing.assert_array_equal(p.point_indices, brute_radius(pts, pts[0], R))
    assert 0 in p.point_indices


# --- LRF


def asym_plane_patch():
    pts = plane_grid(9) - [4.0, 4.0, 0]
    pts = pts[pts[:, 0] < 2.5]  # more mass toward -x
    c = PointCloud(pts)
    centre = int(np.argmin(np.linalg.norm(pts, axis=1)))
    return c, SurfacePatch(centre, np.arange(len(pts)), 10.0)


def test_lrf_planar_asymmetric():
    c, patch = asym_plane_patch()
    f = compute_lrf(c, patch)
    assert abs(abs(f.z_axis[2]) - 1) < 1e-9
    # x points from the mass toward p: sum(p - p_i) has +x sign here
    assert f.x_axis @ [1, 0, 0] > 0.99


def test_lrf_axes_orthonormal_right_handed(fragment):
    a, r = fragment
    for kp in detect_keypoints(a, resolution=r)[:20]:
        f = compute_lrf(a, extract_patch(a, kp, 6 * r))
        B = f.basis
        np.testing.assert_allclose(B @ B.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(B) == pytest.approx(1.0, abs=1e-9)


def test_lrf_centrosymmetric_degenerate():
    c = PointCloud(plane_grid(5) - [2.0, 2.0, 0])
    with pytest.raises(DegenerateFrame):
        compute_lrf(c, SurfacePatch(12, np.arange(25), 10.0))


def test_patch_covariance_about_feature_point():
    rng = np.random.default_rng(0)
    pts, p = rng.normal(size=(30, 3)), rng.normal(size=3)
    direct = sum(np.outer(q - p, q - p) for q in pts) / (len(pts) - 1)
    np.testing.assert_allclose(patch_covariance(pts, p), direct, atol=1e-12)
    # not the centroid covariance
    assert not np.allclose(patch_covariance(pts, p), np.cov(pts.T))


def test_local_frame_known_points(fragment):
    a, r = fragment
    kp = detect_keypoints(a, resolution=r)[0]
    patch = extract_patch(a, kp, 6 * r)
    f = compute_lrf(a, patch)
    loc = to_local_frame(a, patch, f)
    where = int(np.flatnonzero(patch.point_indices == kp)[0])
    np.testing.assert_allclose(loc[where], 0.0, atol=1e-12)
    probe = PointCloud(np.vstack([a.points[kp], a.points[kp] + 0.5 * patch.R * f.x_axis]))
    got = to_local_frame(probe, SurfacePatch(0, np.array([0, 1]), patch.R), f)
    np.testing.assert_allclose(got[1], [0.5 * patch.R, 0, 0], atol=1e-9)


def test_local_frame_rigid_invariant(fragment):
    a, r = fragment
    rng = np.random.default_rng(11)
    t = RigidTransform(random_rotation(rng), rng.uniform(-50, 50, 3))
    b = apply_transform(a, t)
    for kp in detect_keypoints(a, resolution=r)[:25]:
        pa, pb = extract_patch(a, kp, 6 * r), extract_patch(b, kp, 6 * r)
        np.testing.assert_array_equal(pa.point_indices, pb.point_indices)
        fa, fb = compute_lrf(a, pa), compute_lrf(b, pb)
        np.testing.assert_allclose(fb.basis, fa.basis @ t.rotation.T, atol=1e-6)
        np.testing.assert_allclose(to_local_frame(b, pb, fb), to_local_frame(a, pa, fa), atol=1e-6)


# --- regions


def disc(radius=8.0):
    g = plane_grid(21) - [10.0, 10.0, 0]
    return g[np.linalg.norm(g, axis=1) < radius]


def test_edges_of_disc_in_annulus():
    pts = disc()
    e = extract_edge_points(PointCloud(pts))
    rad = np.linalg.norm(pts[e], axis=1)
    assert len(e) > 0 and rad.min() >= 8.0 - 2.0 and rad.max() < 8.0


def test_three_point_patch_all_edges():
    c = PointCloud(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]]))
    assert sorted(extract_edge_points(c).tolist()) == [0, 1, 2]


def test_half_disc_cut_is_edge():
    pts = disc()
    pts = pts[pts[:, 0] >= 0]
    e = set(extract_edge_points(PointCloud(pts)).tolist())
    cut = {i for i, p in enumerate(pts) if p[0] == 0 and abs(p[1]) < 6}
    assert cut <= e


def test_fit_plane_exact_and_flip():
    pts = plane_grid(5, z=2.0)
    c = PointCloud(pts)
    up = fit_plane(c, orient_like=[0, 0, 1])
    np.testing.assert_allclose(up.normal, [0, 0, 1], atol=1e-12)
    assert up.offset == pytest.approx(-2.0)
    assert np.abs(up.signed_distance(pts)).max() < 1e-12
    down = fit_plane(c, orient_like=[0, 0, -1])
    np.testing.assert_allclose(down.normal, [0, 0, -1], atol=1e-12)


def test_fit_plane_noisy():
    rng = np.random.default_rng(2)
    n_true = np.array([1.0, 2.0, 3.0]) / np.sqrt(14)
    base = rng.uniform(-5, 5, (500, 3))
    base -= np.outer(base @ n_true, n_true)
    pts = base + rng.normal(0, 0.01, base.shape)
    pl = fit_plane(PointCloud(pts), orient_like=n_true)
    assert np.degrees(np.arccos(min(1.0, pl.normal @ n_true))) < 1.0


def test_concavity_flat_and_flipped():
    pts = plane_grid(6)
    up = np.tile([0, 0, 1.0], (len(pts), 1))
    plane = Plane(np.array([0, 0, 1.0]), 0.0)
    idx = np.arange(len(pts))
    assert (classify_concavity(PointCloud(pts, up), idx, plane) == CONVEX).all()
    assert (classify_concavity(PointCloud(pts, -up), idx, plane) == CONCAVE).all()


def test_concavity_hemisphere_bump():
    g = plane_grid(21) - [10.0, 10.0, 0]
    rho = np.linalg.norm(g[:, :2], axis=1)
    inside = rho < 5
    z = np.where(inside, np.sqrt(np.clip(25 - rho**2, 0, None)), 0.0)
    pts = np.column_stack([g[:, :2], z])
    # analytic normals of the cap and of the flat ring, tilted plane normal
    nrm = np.tile([0, 0, 1.0], (len(pts), 1))
    nrm[inside] = pts[inside] / 5.0
    pn = np.array([0.6, 0.0, 0.8])
    labels = classify_concavity(PointCloud(pts, nrm), np.arange(len(pts)), Plane(pn, 0.0))
    expect = np.where(nrm @ pn >= 0, CONVEX, CONCAVE)
    np.testing.assert_array_equal(labels, expect)
    assert (labels == CONCAVE).any() and (labels == CONVEX).any()


@settings(max_examples=15, deadline=None)
@given(seeds)
def test_concavity_rigid_invariant_and_partition(seed):
    a, _, _ = generate_fragment_pair(SynthConfig(seed=seed % 1000, extent=20))
    rng = np.random.default_rng(seed)
    t = RigidTransform(random_rotation(rng), rng.uniform(-5, 5, 3))
    idx = rng.choice(len(a), 150, replace=False)
    pl = Plane(rng.normal(size=3), 0.3)
    pl = Plane(pl.normal / np.linalg.norm(pl.normal), 0.3)
    moved = Plane(t.rotation @ pl.normal, pl.offset - (t.rotation @ pl.normal) @ t.translation)
    for mode in ("normal", "distance"):
        l0 = classify_concavity(a, idx, pl, mode=mode)
        l1 = classify_concavity(apply_transform(a, t), idx, moved, mode=mode)
        np.testing.assert_array_equal(l0, l1)
        assert np.sum(l0 == CONVEX) + np.sum(l0 == CONCAVE) == len(idx)
