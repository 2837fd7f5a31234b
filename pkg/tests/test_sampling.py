import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tsdf4d.core_io import MapConfig, Pose, Scan, ScanSequence
from tsdf4d.sampling import (CERTAIN, FREE, SURFACE, SampleSet, build_pool, nearest_in_scan, sample_ray,
                             sample_rays, split_certain)


def scan(points, origin=(0.0, 0.0, 0.0), frame=0):
    return Scan(frame, np.asarray(origin, float), np.asarray(points, float).reshape(-1, 3))


def test_lambda_ranges_r10_tau05():
    rng = np.random.default_rng(0)
    s = sample_ray([0, 0, 0], [10, 0, 0], 0, 0.5, 2000, 2000, rng)
    lam = s.q[:, 0] / 10
    surf, free = lam[s.region == SURFACE], lam[s.region == FREE]
    assert surf.min() > 0.95 and surf.max() < 1.05
    assert free.min() > 0 and free.max() < 0.95
    # both ends of each interval are actually reached
    assert surf.min() < 0.951 and surf.max() > 1.049 and free.max() > 0.94


def test_d_surf_is_signed_projective_distance():
    rng = np.random.default_rng(1)
    s = sample_ray([1, 2, 3], [1, 2, 13], 4, 0.5, 50, 50, rng)
    lam = (s.q[:, 2] - 3) / 10
    np.testing.assert_allclose(s.d_surf, (1 - lam) * 10, atol=1e-12)
    assert np.all(s.t == 4)


def test_d_surf_examples():
    # lambda = 1 sits on the endpoint, lambda = 1.05 is tau behind it
    assert (1 - 1.0) * 10 == 0.0
    assert (1 - 1.05) * 10 == pytest.approx(-0.5)


def test_short_rays_skipped_and_counted():
    rng = np.random.default_rng(0)
    assert sample_ray([0, 0, 0], [0.4, 0, 0], 0, 0.5, 5, 15, rng) is None
    assert sample_ray([0, 0, 0], [0.5, 0, 0], 0, 0.5, 5, 15, rng) is None
    surf, free, skipped = sample_rays([0, 0, 0], [[0.3, 0, 0], [5, 0, 0], [0, 0.5, 0]], 0, 0.5, 5, 15, rng)
    assert skipped == 2 and len(surf) == 5 and len(free) == 15


def test_single_ray_pool_counts():
    seq = ScanSequence([scan([[10.0, 0, 0]])])
    pool = build_pool(seq, MapConfig(surface_samples=5, free_samples=15))
    assert len(pool.surface) == 5
    assert len(pool.free) + len(pool.certain) == 15
    assert sum(pool.counts().values()) == 20 and pool.skipped_rays == 0


def test_free_sample_near_wall_stays_free():
    # endpoint 0.3 m from the sample, tau = 0.5
    s = scan([[1.3, 0, 0], [5, 5, 5]])
    free = SampleSet(np.array([[1.0, 0, 0]]), np.zeros(1, np.int64), np.array([3.0]), np.array([FREE], np.int8))
    kept, certain = split_certain(free, s, 0.5, 15.0)
    assert len(kept) == 1 and len(certain) == 0


def test_mid_air_sample_is_certain():
    s = scan([[3.0, 0, 0]])
    free = SampleSet(np.array([[1.0, 0, 0]]), np.zeros(1, np.int64), np.array([2.0]), np.array([FREE], np.int8))
    kept, certain = split_certain(free, s, 0.5, 15.0)
    assert len(kept) == 0 and len(certain) == 1 and certain.region[0] == CERTAIN


def test_sparse_sample_never_certain():
    s = scan([[30.0, 0, 0]])
    free = SampleSet(np.array([[20.0, 0, 0]]), np.zeros(1, np.int64), np.array([10.0]), np.array([FREE], np.int8))
    kept, certain = split_certain(free, s, 0.5, 15.0)
    assert len(kept) == 1 and len(certain) == 0


def test_nn_exact_examples():
    assert nearest_in_scan(scan([[0, 0, 0]]), np.array([3.0, 4.0, 0.0])) == 5.0
    pts = np.random.default_rng(0).normal(size=(20, 3))
    assert nearest_in_scan(scan(pts), pts[7]) == 0.0


def test_nn_matches_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        pts = rng.uniform(-5, 5, (rng.integers(1, 40), 3))
        p = rng.uniform(-6, 6, 3)
        want = np.sqrt(((pts - p) ** 2).sum(axis=1)).min()
        assert nearest_in_scan(scan(pts), p) == pytest.approx(want, rel=1e-12, abs=1e-12)


def small_sequence():
    rng = np.random.default_rng(3)
    scans = []
    for f in range(3):
        d = rng.normal(size=(200, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        r = rng.uniform(0.2, 25, (200, 1))
        o = np.array([f * 0.5, 0, 0])
        scans.append(scan(o + r * d, o, f))
    return ScanSequence(scans)


def test_pool_invariants():
    cfg = MapConfig(truncation=0.5, r_dense=15.0)
    seq = small_sequence()
    pool = build_pool(seq, cfg)
    tau = cfg.truncation
    assert np.all(np.abs(pool.surface.d_surf) <= tau + 1e-12)
    for part in (pool.free, pool.certain):
        assert np.all(part.d_surf >= tau - 1e-12)
    assert np.all(np.isfinite(pool.all().q))
    # certain-free re-checked by brute force against the sample's own frame
    for i in range(len(pool.certain)):
        sc = seq[int(pool.certain.t[i])]
        q = pool.certain.q[i]
        assert np.linalg.norm(q - sc.origin) < cfg.r_dense
        assert np.sqrt(((sc.points_world - q) ** 2).sum(axis=1)).min() > tau
    # no sample behind the sensor
    for part in (pool.surface, pool.free, pool.certain):
        for f in range(3):
            sel = part.t == f
            sc = seq[f]
            ray_dir = part.q[sel] - sc.origin
            assert np.all(np.linalg.norm(ray_dir, axis=1) > 0)


def test_pool_reproducible():
    cfg = MapConfig()
    a, b = build_pool(small_sequence(), cfg), build_pool(small_sequence(), cfg)
    for x, y in zip((a.surface, a.free, a.certain), (b.surface, b.free, b.certain)):
        assert x.q.tobytes() == y.q.tobytes() and x.d_surf.tobytes() == y.d_surf.tobytes()
    c = build_pool(small_sequence(), cfg, seed=1)
    assert c.surface.q.tobytes() != a.surface.q.tobytes()


@settings(max_examples=50, deadline=None)
@given(st.floats(0.6, 50), st.floats(0.05, 0.5), st.integers(0, 2**31))
def test_free_samples_strictly_before_band(r, tau, seed):
    s = sample_ray([0, 0, 0], [0, r, 0], 0, tau, 8, 8, np.random.default_rng(seed))
    free = s.d_surf[s.region == FREE]
    surf = s.d_surf[s.region == SURFACE]
    assert np.all(free >= tau * (1 - 1e-12)) and np.all(free < r)
    assert np.all(np.abs(surf) <= tau * (1 + 1e-12))
    assert np.all(s.q[:, 1] > 0)


def test_pose_only_sets_origin():
    pose = Pose.from_yaw(0.3, (1.0, 2.0, 0.5))
    sc = Scan(0, pose.translation, pose.apply(np.array([[5.0, 0, 0]])))
    s = sample_ray(sc.origin, sc.points_world[0], 0, 0.5, 3, 3, np.random.default_rng(0))
    assert np.allclose(np.linalg.norm(s.q - sc.origin, axis=1), 5 - s.d_surf)
