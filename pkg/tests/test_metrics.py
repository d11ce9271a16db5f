import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragmatch.matching import Correspondence
from fragmatch.metrics import (
    MatchReport,
    angle_stats,
    aonv,
    local_aonv,
    poc,
    pr_curve,
    project_to_plane,
    rmse,
    vector_angle_deg,
    write_pr_csv,
    write_report_csv,
    write_report_json,
)
from fragmatch.keypoints import detect_keypoints
from fragmatch.pointcloud import (
    Plane,
    PointCloud,
    RigidTransform,
    apply_transform,
    compute_resolution,
    estimate_normals,
    random_rotation,
    rotation_about,
)
from fragmatch.regions import extract_edge_points, fit_plane
from fragmatch.synth import SynthConfig, generate_fragment_pair

from oracles import brute_poc

seeds = st.integers(0, 2**32 - 1)


@pytest.fixture(scope="module")
def surface():
    a, b, gt = generate_fragment_pair(SynthConfig(seed=2, extent=40))
    r = compute_resolution(a)
    return a, b, gt, r, detect_keypoints(b, resolution=r)


def flat(x0, x1, n_y=30, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = np.meshgrid(np.arange(x0, x1), np.arange(n_y), indexing="ij")
    xy = np.column_stack([xs.ravel(), ys.ravel()]) + rng.uniform(-0.2, 0.2, (xs.size, 2))
    pts = np.column_stack([xy, np.zeros(len(xy))])
    return PointCloud(pts, np.tile([0, 0, 1.0], (len(pts), 1)))


# --- projection


def test_projection_examples():
    pl = Plane(np.array([0, 0, 1.0]), 0.0)
    np.testing.assert_array_equal(project_to_plane(np.array([[0, 0, 5.0]]), pl), [[0, 0, 0]])
    on = np.array([[1.0, 2.0, 0.0]])
    np.testing.assert_array_equal(project_to_plane(on, pl), on)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_projection_residual_and_idempotent(seed):
    rng = np.random.default_rng(seed)
    n = rng.normal(size=3)
    pl = Plane(n / np.linalg.norm(n), float(rng.uniform(-5, 5)))
    pts = rng.uniform(-10, 10, (50, 3))
    once = project_to_plane(pts, pl)
    assert np.abs(pl.signed_distance(once)).max() < 1e-9
    np.testing.assert_allclose(project_to_plane(once, pl), once, atol=1e-12)


# --- PoC


def test_poc_copy_is_full(surface):
    a, *_ = surface
    assert poc(a, a, 0.1) == 100.0


def test_poc_half_overlap():
    src, dst = flat(0, 40), flat(20, 60, seed=1)
    assert poc(src, dst, 1.0) == pytest.approx(50.0, abs=3.0)


def test_poc_matches_brute_force(surface):
    a, b, gt, r, _ = surface
    moved = apply_transform(a, gt.transform)
    big = moved if len(moved) >= len(b) else b
    small = b if big is moved else moved
    pl = fit_plane(big, extract_edge_points(big), orient_like=big.normals.sum(axis=0))
    ref = brute_poc(big.points, small.points, pl.normal, pl.offset, 2 * r)
    assert poc(moved, b, 2 * r) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=10, deadline=None)
@given(st.lists(st.floats(0.05, 3.0), min_size=2, max_size=6))
def test_poc_monotone_in_chi(chis):
    src, dst = flat(0, 30), flat(5, 35, seed=2)
    vals = [poc(src, dst, c) for c in sorted(chis, reverse=True)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


# --- angles


def test_vector_angle_exact_zero():
    v = np.random.default_rng(0).normal(size=(10, 3))
    assert (vector_angle_deg(v, v) == 0).all()


def test_aonv_identical_and_rotated(surface):
    a, *_ = surface
    assert aonv(a, a) == 0.0
    c = a.points.mean(axis=0)
    rot = rotation_about([1, 1, 0], 30.0)
    tilted = apply_transform(a, RigidTransform(rot, c - rot @ c))
    assert aonv(a, tilted) == pytest.approx(30.0, abs=1.0)


def test_local_aonv_copy_zero(surface):
    a, _, _, r, _ = surface
    kps = detect_keypoints(a, resolution=r)
    assert local_aonv(a, a, kps, 10 * r) == 0.0


def test_flipped_alignment_caught_by_local_aonv(surface):
    a, b, gt, r, kb = surface
    good = apply_transform(a, gt.transform)
    # turn the source upside down about its in-plane x axis through its centroid
    c = a.points.mean(axis=0)
    rot = rotation_about([1, 0, 0], 180.0)
    flip = gt.transform.compose(RigidTransform(rot, c - rot @ c))
    bad = apply_transform(a, flip)
    assert poc(bad, b, 2 * r) > 90.0
    assert local_aonv(bad, b, kb, 10 * r) > 5 * local_aonv(good, b, kb, 10 * r)
    assert local_aonv(bad, b, kb, 10 * r) > 10.0


def test_angle_stats_copy_and_rotated(surface):
    a, *_ = surface
    assert angle_stats(a, a) == (0.0, 0.0, 0.0)
    # tilt every normal by 10 degrees toward a perpendicular direction
    n = a.normals
    perp = np.cross(n, [0.3, -1.0, 0.2])
    perp /= np.linalg.norm(perp, axis=1, keepdims=True)
    th = np.radians(10.0)
    spun = PointCloud(a.points, np.cos(th) * n + np.sin(th) * perp)
    mx, mn, me = angle_stats(a, spun)
    assert me == pytest.approx(10.0, abs=1e-6) and mx == pytest.approx(10.0, abs=1e-6)


# --- RMSE


def test_rmse_cases():
    rng = np.random.default_rng(0)
    t = RigidTransform(random_rotation(rng), [1, 2, 3.0])
    s = rng.normal(size=(4000, 3))
    corrs = [Correspondence(i, i, 0.0) for i in range(len(s))]
    assert rmse(corrs, PointCloud(s), PointCloud(t.apply(s)), t) == (0.0, 0.0, 0.0, 0.0)
    sigma = 0.3
    noisy = PointCloud(t.apply(s) + rng.normal(0, sigma, s.shape))
    assert rmse(corrs, PointCloud(s), noisy, t)[3] == pytest.approx(sigma * np.sqrt(3), rel=0.1)
    shifted = PointCloud(t.apply(s) + [0.5, 0, 0])
    rx, ry, rz, _ = rmse(corrs, PointCloud(s), shifted, t)
    assert rx == pytest.approx(0.5) and ry == 0.0 and rz == 0.0


# --- common rigid motion leaves metrics unchanged


def test_metrics_rigid_invariant(surface):
    a, b, gt, r, kb = surface
    moved = apply_transform(a, gt.transform)
    t = RigidTransform(random_rotation(np.random.default_rng(4)), [3.0, -8.0, 1.0])
    m2, b2 = apply_transform(moved, t), apply_transform(b, t)
    assert poc(m2, b2, 2 * r) == pytest.approx(poc(moved, b, 2 * r), abs=1e-9)
    assert aonv(m2, b2) == pytest.approx(aonv(moved, b), abs=1e-6)
    assert local_aonv(m2, b2, kb, 10 * r) == pytest.approx(local_aonv(moved, b, kb, 10 * r), abs=1e-6)
    np.testing.assert_allclose(angle_stats(m2, b2), angle_stats(moved, b), atol=1e-6)


# --- PR curves


def test_pr_perfect_matcher():
    gt = {(i, i) for i in range(20)}
    m = [Correspondence(i, i, i / 20) for i in range(20)]
    curve = pr_curve(m, gt, np.linspace(0, 1, 11))
    assert all(p == 1.0 for _, p, _ in curve)
    assert curve[-1][2] == 1.0


def test_pr_random_matcher():
    n = 20
    rng = np.random.default_rng(0)
    gt = {(i, i) for i in range(n)}
    m = [Correspondence(i, j, float(rng.uniform())) for i in range(n) for j in range(n)]
    (_, p, rec), = pr_curve(m, gt, [np.inf])
    assert p == pytest.approx(1 / n) and rec == 1.0


def test_pr_infinite_threshold_recall():
    gt = {(0, 0), (1, 1), (2, 2), (3, 3)}
    m = [Correspondence(0, 0, 0.1), Correspondence(1, 1, 5.0), Correspondence(2, 7, 0.2)]
    (_, p, rec), = pr_curve(m, gt, [np.inf])
    assert rec == 0.5 and p == pytest.approx(2 / 3)


def test_pr_empty_gt_and_empty_result():
    with pytest.raises(ValueError):
        pr_curve([], set(), [1.0])
    assert pr_curve([], {(0, 0)}, [1.0]) == [(1.0, 1.0, 0.0)]


def test_report_files(tmp_path):
    rep = MatchReport(99.5, 1.25, 2.5, 30.0, 0.0, 5.0, 0.1, 0.2, 0.3, 0.4, 1.25, 2.5, 3.14)
    write_report_json(tmp_path / "r.json", rep)
    d = json.loads((tmp_path / "r.json").read_text())
    assert d["poc"] == 99.5 and "runtime_seconds" not in d
    write_report_json(tmp_path / "t.json", rep, include_runtime=True)
    assert json.loads((tmp_path / "t.json").read_text())["runtime_seconds"] == 3.14
    write_report_csv(tmp_path / "r.csv", rep)
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert dict(zip(*rows))["local_aonv"] == "2.5"
    write_pr_csv(tmp_path / "pr.csv", [(0.5, 1.0, 0.25)])
    assert (tmp_path / "pr.csv").read_text().splitlines()[1] == "0.5,1.0,0.25"
