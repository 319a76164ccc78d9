import math

import numpy as np
import pytest

from radarseg.grouping import (GroupForm, GroupSpec, ball_query, fps, fps_batch, knn, knn_batch,
                               query, query_batch, ring_query)

from conftest import random_cloud


# ----------------------------------------------------------------------------- oracles


def _polar(p):
    r = math.hypot(p[0], p[1])
    phi = 0.0 if r == 0 else math.atan2(p[1], p[0])
    return r, (math.pi if phi == -math.pi else phi)


def oracle_ball(cloud, c, radius, k):
    """Pure-Python scan: sort qualifying points by (distance, range, azimuth, index)."""
    keys = []
    for i, p in enumerate(cloud):
        d = math.dist(p, cloud[c])
        if d <= radius:
            r, phi = _polar(p)
            keys.append((d, r, phi, i))
    keys.sort()
    return [i for *_, i in keys], len(keys)


def oracle_ring(cloud, c, width, k):
    rc = math.hypot(*cloud[c])
    keys = []
    for i, p in enumerate(cloud):
        r, phi = _polar(p)
        if abs(r - rc) <= width / 2:
            keys.append((abs(r - rc), phi, r, i))
    keys.sort()
    return [i for *_, i in keys], len(keys)


def _fill(order, k, c):
    if not order:
        return [c] * k
    chosen = order[:k]
    return chosen + [chosen[0]] * (k - len(chosen))


def _check_against_oracle(rng, n, form, size, k, n_cent):
    cloud = random_cloud(rng, n, extent=float(rng.uniform(5, 70)))
    if rng.random() < 0.3:
        # lattice-like coordinates produce exact distance ties
        cloud = np.round(cloud)
    cents = rng.choice(n, size=min(n_cent, n), replace=False)
    fn = ball_query if form == "circle" else ring_query
    oracle = oracle_ball if form == "circle" else oracle_ring
    res = fn(cloud, cents, size, k)
    pts = [tuple(p) for p in cloud]
    for row, cnt, c in zip(res.indices, res.counts, cents):
        order, count = oracle(pts, int(c), size, k)
        assert cnt == count
        assert set(row.tolist()) == set(_fill(order, k, int(c)))
        assert row.tolist() == _fill(order, k, int(c))


def test_grouping_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for trial in range(1000):
        n = int(rng.integers(1, 251)) if trial % 10 == 0 else int(rng.integers(1, 80))
        form = "circle" if trial % 2 == 0 else "ring"
        size = float(rng.uniform(0.5, 12.0))
        k = int(rng.integers(1, 20))
        _check_against_oracle(rng, n, form, size, k, n_cent=6)


def test_knn_oracle():
    rng = np.random.default_rng(7)
    for trial in range(1000):
        n = int(rng.integers(1, 120))
        ref = random_cloud(rng, n)
        if trial % 3 == 0:
            ref = np.round(ref / 5) * 5
        q = random_cloud(rng, 5)
        k = int(rng.integers(1, n + 1))
        idx, dist = knn(q, ref, k)
        for qi, row, drow in zip(q, idx, dist):
            keys = sorted((math.dist(qi, p), *_polar(p), i) for i, p in enumerate(ref))
            assert row.tolist() == [i for *_, i in keys[:k]]
            np.testing.assert_allclose(drow, [d for d, *_ in keys[:k]], rtol=1e-12)


# ----------------------------------------------------------------------------- examples


def test_ball_single_point_fill():
    assert ball_query([[0.0, 0.0]], [0], 1.0, 4).groups() == [[0, 0, 0, 0]]


def test_ball_isolation():
    cloud = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]])
    res = ball_query(cloud, [0, 1, 2], 1.0, 3)
    assert res.groups() == [[0, 0, 0], [1, 1, 1], [2, 2, 2]]
    assert res.counts.tolist() == [1, 1, 1]


def test_ball_boundary_is_inclusive():
    cloud = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert ball_query(cloud, [0], 5.0, 2).groups() == [[0, 1]]
    assert ball_query(cloud, [0], np.nextafter(5.0, 0), 2).groups() == [[0, 0]]


def test_ring_same_range_ghost_geometry():
    cloud = np.array([[28.0, -8.0], [20.0, -21.0]])
    assert math.hypot(20, -21) == pytest.approx(29.0, abs=1e-12)
    ring = ring_query(cloud, [0], 4.0, 4)
    assert set(ring.groups()[0]) == {0, 1}
    ball = ball_query(cloud, [0], 6.0, 4)
    assert set(ball.groups()[0]) == {0}
    assert math.dist(cloud[0], cloud[1]) == pytest.approx(15.264, abs=1e-3)


def test_ring_degenerate_same_range(rng):
    phi = rng.uniform(-1, 1, 30)
    cloud = np.c_[20 * np.cos(phi), 20 * np.sin(phi)]
    res = ring_query(cloud, np.arange(30), 0.01, 30)
    assert all(sorted(g) == list(range(30)) for g in res.groups())


def test_ring_membership_is_range_interval(rng):
    cloud = random_cloud(rng, 120)
    r = np.hypot(cloud[:, 0], cloud[:, 1])
    res = ring_query(cloud, np.arange(120), 3.0, 250)
    for c, g in enumerate(res.groups()):
        inside = set(np.flatnonzero(np.abs(r - r[c]) <= 1.5).tolist())
        assert set(g) == inside


def test_ring_orders_by_azimuth_on_range_ties():
    cloud = np.array([[0.0, 10.0], [10.0, 0.0], [0.0, -10.0]])
    # same range for all; ties broken by azimuth ascending
    assert ring_query(cloud, [0], 1.0, 3).groups() == [[2, 1, 0]]


def test_centroids_as_positions():
    cloud = np.array([[1.0, 1.0], [2.0, 2.0], [9.0, 9.0]])
    a = ball_query(cloud, [[2.0, 2.0]], 2.0, 3)
    b = ball_query(cloud, np.array([1]), 2.0, 3)
    assert a.groups() == b.groups() == [[1, 0, 1]]
    with pytest.raises(ValueError):
        ball_query(cloud, [[5.0, 5.0]], 2.0, 3)


def test_errors():
    with pytest.raises(ValueError):
        ball_query(np.zeros((0, 2)), [], 1.0, 2)
    with pytest.raises(ValueError):
        ring_query(np.zeros((0, 2)), [], 1.0, 2)
    with pytest.raises(ValueError):
        GroupSpec("circle", 0.0, 4)
    with pytest.raises(ValueError):
        GroupSpec("ring", 1.0, 0)
    with pytest.raises(ValueError):
        fps(np.zeros((3, 2)), 4)
    with pytest.raises(ValueError):
        knn(np.zeros((1, 2)), np.zeros((0, 2)), 1)
    with pytest.raises(IndexError):
        ball_query(np.zeros((3, 2)), [5], 1.0, 2)


def test_spec_round_trip():
    s = GroupSpec(GroupForm.RING, 4.0, 16)
    assert GroupSpec.from_dict(s.to_dict()) == s
    assert GroupSpec("circle", 2.5, 3).form is GroupForm.CIRCLE


# ----------------------------------------------------------------------------- fps / knn


def test_fps_full_and_collinear():
    cloud = np.array([[2.0, 0.0], [1.0, 0.0], [3.0, 0.0]])
    assert fps(cloud, 2).tolist() == [2, 1]
    full = fps(cloud, 3)
    assert sorted(full.tolist()) == [0, 1, 2] and full[0] == 2


def test_fps_distinct_and_greedy(rng):
    for _ in range(50):
        cloud = random_cloud(rng, 40)
        sel = fps(cloud, 12)
        assert len(set(sel.tolist())) == 12
        r = np.hypot(cloud[:, 0], cloud[:, 1])
        assert r[sel[0]] == r.max()
        for j in range(1, 12):
            d = np.min(np.linalg.norm(cloud[:, None] - cloud[sel[:j]][None], axis=2), axis=1)
            assert d[sel[j]] == d.max()


def test_fps_seed_tie_prefers_smaller_azimuth():
    cloud = np.array([[0.0, 5.0], [0.0, -5.0], [1.0, 0.0]])
    assert fps(cloud, 1).tolist() == [1]


def test_knn_examples(rng):
    ref = random_cloud(rng, 20)
    idx, dist = knn(ref[7:8], ref, 3)
    assert idx[0, 0] == 7 and dist[0, 0] == 0.0
    idx, dist = knn(ref[:2], ref, 20)
    assert np.all(np.diff(dist, axis=1) >= 0) and sorted(idx[0].tolist()) == list(range(20))


# ----------------------------------------------------------------------------- permutation


def _canonical(groups, cloud):
    return [sorted(map(tuple, cloud[g].tolist())) for g in groups]


def test_permutation_invariance(rng):
    cloud = np.round(random_cloud(rng, 60), 1)
    cloud = np.unique(cloud, axis=0)
    n = len(cloud)
    base = {
        "fps": cloud[fps(cloud, 8)].tolist(),
        "ball": [cloud[g].tolist() for g in ball_query(cloud, np.arange(n), 6.0, 8).groups()],
        "ring": [cloud[g].tolist() for g in ring_query(cloud, np.arange(n), 2.0, 8).groups()],
        "knn": [cloud[g].tolist() for g in knn(cloud, cloud, 3)[0]],
    }
    for _ in range(100):
        p = rng.permutation(n)
        pc = cloud[p]
        inv = np.argsort(p)
        assert pc[fps(pc, 8)].tolist() == base["fps"]
        g = ball_query(pc, np.arange(n), 6.0, 8).indices[inv]
        assert [pc[row].tolist() for row in g] == base["ball"]
        g = ring_query(pc, np.arange(n), 2.0, 8).indices[inv]
        assert [pc[row].tolist() for row in g] == base["ring"]
        g = knn(pc, pc, 3)[0][inv]
        assert [pc[row].tolist() for row in g] == base["knn"]


# ----------------------------------------------------------------------------- batched kernels


def test_batched_matches_single(rng):
    B, N = 4, 50
    pts = np.stack([random_cloud(rng, N) for _ in range(B)])
    cents = rng.integers(0, N, size=(B, 10))
    specs = [GroupSpec("circle", 5.0, 6), GroupSpec("ring", 2.0, 6), GroupSpec("circle", 9.0, 3)]
    batched = query_batch(pts, cents, specs)
    for b in range(B):
        for spec, res in zip(specs, batched):
            single = query(pts[b], cents[b], spec)
            np.testing.assert_array_equal(res.indices[b], single.indices)
            np.testing.assert_array_equal(res.counts[b], single.counts)


def test_valid_mask_equals_subset(rng):
    N = 40
    pts = random_cloud(rng, N)
    valid = rng.random(N) < 0.6
    valid[0] = True
    sub = np.flatnonzero(valid)
    cents = sub[:8]
    spec = GroupSpec("ring", 3.0, 5)
    masked = query_batch(pts[None], cents[None], [spec], valid[None])[0]
    plain = query(pts[sub], np.arange(8), spec)
    np.testing.assert_array_equal(masked.indices[0], sub[plain.indices])
    np.testing.assert_array_equal(masked.counts[0], plain.counts)

    sel, taken = fps_batch(pts[None], 6, valid[None])
    np.testing.assert_array_equal(sel[0], sub[fps(pts[sub], 6)])
    idx, dist = knn_batch(pts[None, :5], pts[None], 3, valid[None])
    ref_idx, ref_dist = knn(pts[:5], pts[sub], 3)
    np.testing.assert_array_equal(idx[0], sub[ref_idx])
    np.testing.assert_allclose(dist[0], ref_dist)


def test_fps_batch_short_frames_repeat_first(rng):
    pts = random_cloud(rng, 10)[None]
    valid = np.zeros((1, 10), dtype=bool)
    valid[0, :3] = True
    sel, taken = fps_batch(pts, 5, valid)
    assert taken.tolist() == [3]
    assert sorted(sel[0, :3].tolist()) == [0, 1, 2]
    assert sel[0, 3:].tolist() == [sel[0, 0]] * 2
