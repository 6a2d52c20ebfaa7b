import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import brute_fps, brute_knn, brute_radius
from geoseg.spatial import build_index, farthest_point_sample, knn, knn_excluding_self, radius_neighbors

coords = st.floats(-10, 10, allow_nan=False, width=64)


def clouds(min_n=1, max_n=60):
    return st.integers(min_n, max_n).flatmap(lambda n: arrays(np.float64, (n, 3), elements=coords))


def grid_cloud(n, seed):
    # coarse integer lattice: many exact distance ties
    return np.random.default_rng(seed).integers(0, 4, size=(n, 3)).astype(float)


@given(clouds(), st.data())
def test_knn_matches_brute_force(pts, data):
    k = data.draw(st.integers(1, len(pts)))
    q = data.draw(arrays(np.float64, (5, 3), elements=coords))
    t = knn(build_index(pts), q, k)
    idx, d = brute_knn(pts, q, k)
    np.testing.assert_array_equal(t.indices, idx)
    np.testing.assert_array_equal(t.distances, d)


@pytest.mark.parametrize("seed", range(5))
def test_knn_ties_resolve_to_lower_index(seed):
    pts = grid_cloud(200, seed)
    t = knn(build_index(pts), pts, 20)
    idx, _ = brute_knn(pts, pts, 20)
    np.testing.assert_array_equal(t.indices, idx)


def test_knn_large_cloud():
    pts = np.random.default_rng(3).random((4096, 3))
    q = pts[:64]
    t = knn(build_index(pts), q, 32)
    np.testing.assert_array_equal(t.indices, brute_knn(pts, q, 32)[0])


def test_grid_center_neighbors():
    g = np.stack(np.meshgrid(*[np.arange(3.0)] * 3, indexing="ij"), -1).reshape(-1, 3)
    t = knn(build_index(g), [[1.0, 1.0, 1.0]], 7)
    assert t.indices[0, 0] == 13
    got = {tuple(g[i] - 1) for i in t.indices[0, 1:]}
    assert got == {(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)}
    np.testing.assert_allclose(t.distances[0], [0, 1, 1, 1, 1, 1, 1])


def test_knn_bad_k():
    idx = build_index(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        knn(idx, np.zeros((1, 3)), 4)
    with pytest.raises(ValueError):
        knn(idx, np.zeros((1, 3)), 0)
    with pytest.raises(ValueError):
        build_index([[0.0, np.nan, 0.0]])


@given(clouds(2), st.floats(0.01, 8.0))
def test_radius_matches_brute_force(pts, r):
    balls = radius_neighbors(build_index(pts), None, r)
    for ball, expect in zip(balls, brute_radius(pts, r)):
        np.testing.assert_array_equal(ball, expect)


def test_radius_boundary_inclusive():
    pts = np.array([[0.0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]])
    balls = radius_neighbors(build_index(pts), None, 0.5)
    assert list(balls[0]) == [1] and list(balls[1]) == [0, 2]
    with pytest.raises(ValueError):
        radius_neighbors(build_index(pts), None, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_knn_excluding_self(seed):
    pts = grid_cloud(80, seed)
    t = knn_excluding_self(build_index(pts), 6)
    assert not (t.indices == np.arange(80)[:, None]).any()
    d2 = ((pts[:, None] - pts[None]) ** 2).sum(-1)
    np.fill_diagonal(d2, np.inf)
    np.testing.assert_allclose(t.distances, np.sqrt(np.sort(d2, axis=1)[:, :6]))


@given(clouds(1, 40), st.data())
def test_fps_greedy_property(pts, data):
    m = data.draw(st.integers(1, len(pts)))
    seed = data.draw(st.integers(0, 1000))
    picks = farthest_point_sample(pts, m, seed)
    assert len(set(picks.tolist())) == m
    assert picks.tolist() == brute_fps(pts, m, int(picks[0]))


def test_fps_seeded_first_pick():
    pts = np.random.default_rng(0).random((50, 3))
    assert farthest_point_sample(pts, 1, 5)[0] == np.random.default_rng(5).integers(50)
    np.testing.assert_array_equal(farthest_point_sample(pts, 10, 5), farthest_point_sample(pts, 10, 5))


def test_fps_duplicates_never_repeat():
    pts = np.zeros((10, 3))
    assert sorted(farthest_point_sample(pts, 10, 0).tolist()) == list(range(10))
