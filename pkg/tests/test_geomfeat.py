import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from geoseg.geomfeat import (
    color_features,
    gcfr_features,
    global_bounding_sphere,
    local_covariance,
    local_covariance_eigenvalues,
    local_density,
    symmetric_eigvals3,
    wrap_angle,
)
from geoseg.spatial import NeighborTable, build_index, knn


def table(pos, k):
    return knn(build_index(pos), pos, k)


def zrot(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


@given(st.integers(0, 10_000))
def test_eigvals_match_lapack(seed):
    m = np.random.default_rng(seed).normal(size=(8, 3, 5))
    c = m @ m.transpose(0, 2, 1)
    np.testing.assert_allclose(symmetric_eigvals3(c), np.linalg.eigvalsh(c)[:, ::-1], atol=1e-9 * np.abs(c).max())


def test_eigvals_special_cases():
    np.testing.assert_allclose(symmetric_eigvals3(np.diag([1.0, 3.0, 2.0])), [3, 2, 1], atol=1e-12)
    np.testing.assert_allclose(symmetric_eigvals3(np.eye(3) * 2), [2, 2, 2], atol=1e-12)
    np.testing.assert_allclose(symmetric_eigvals3(np.zeros((3, 3))), [0, 0, 0])


def test_collinear_neighborhood():
    pos = np.column_stack([np.arange(5.0), np.zeros(5), np.zeros(5)])
    ev = local_covariance_eigenvalues(pos, table(pos, 5))
    np.testing.assert_allclose(ev[:, 1:], 0, atol=1e-9)
    assert np.all(ev[:, 0] > 0)


def test_coincident_points_zero_eigenvalues():
    pos = np.zeros((6, 3))
    np.testing.assert_array_equal(local_covariance_eigenvalues(pos, table(pos, 4)), 0)


@given(st.integers(0, 10_000))
def test_eigenvalue_trace_and_order(seed):
    pos = np.random.default_rng(seed).normal(size=(30, 3))
    t = table(pos, 8)
    ev = local_covariance_eigenvalues(pos, t)
    np.testing.assert_allclose(ev.sum(1), np.trace(local_covariance(pos, t), axis1=1, axis2=2), rtol=1e-9)
    assert np.all(np.diff(ev, axis=1) <= 1e-12) and np.all(ev >= 0)


@given(st.integers(0, 10_000))
def test_eigenvalues_rigid_invariant(seed):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(40, 3))
    t = table(pos, 10)
    moved = pos @ Rotation.random(random_state=seed).as_matrix().T + rng.normal(0, 5, 3)
    np.testing.assert_allclose(local_covariance_eigenvalues(moved, t), local_covariance_eigenvalues(pos, t),
                               atol=1e-9)


def test_wrap_angle_range():
    a = np.linspace(-20, 20, 2001)
    w = wrap_angle(a)
    assert np.all(w > -np.pi) and np.all(w <= np.pi)
    np.testing.assert_allclose(np.cos(w), np.cos(a), atol=1e-12)
    assert wrap_angle(-np.pi) == pytest.approx(np.pi)


def test_gcfr_axis_offsets():
    pos = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1.0]])
    g = gcfr_features(pos, NeighborTable(np.array([[1, 2, 3]] * 4), np.ones((4, 3))))
    np.testing.assert_allclose(g.dis[0], [1, 1, 1])
    np.testing.assert_allclose(g.phi[0], [0, np.pi / 2, 0])
    np.testing.assert_allclose(g.theta[0], [0, 0, np.pi / 2])
    # centroid offset (1/3, 1/3, 1/3)
    assert g.alpha[0] == pytest.approx(np.pi / 4)
    assert g.beta[0] == pytest.approx(np.arctan2(1 / 3, np.hypot(1 / 3, 1 / 3)))
    np.testing.assert_allclose(g.rel_phi[0], wrap_angle(g.phi[0] - np.pi / 4))


def test_gcfr_zero_offset_convention():
    pos = np.array([[0, 0, 0], [0, 0, 0], [-1, 0, 0.0]])
    g = gcfr_features(pos, NeighborTable(np.array([[1, 2]] * 3), np.zeros((3, 2))))
    assert g.dis[0, 0] == 0 and g.phi[0, 0] == 0 and g.theta[0, 0] == 0
    assert g.rel_phi[0, 0] == 0 and g.rel_theta[0, 0] == 0
    assert g.phi[0, 1] == pytest.approx(np.pi)


@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi))
def test_gcfr_density_z_rotation_invariant(seed, angle):
    rng = np.random.default_rng(seed)
    pos = rng.normal(size=(40, 3))
    t = table(pos, 8)
    rot = pos @ zrot(angle).T + np.array([rng.normal(), rng.normal(), 0.0])
    a, b = gcfr_features(pos, t), gcfr_features(rot, t)
    np.testing.assert_allclose(b.dis, a.dis, atol=1e-9)
    np.testing.assert_allclose(np.cos(b.rel_phi), np.cos(a.rel_phi), atol=1e-9)
    np.testing.assert_allclose(np.sin(b.rel_phi), np.sin(a.rel_phi), atol=1e-9)
    np.testing.assert_allclose(b.rel_theta, a.rel_theta, atol=1e-9)
    np.testing.assert_allclose(local_density(rot, t).ratio, local_density(pos, t).ratio, atol=1e-9)


def test_density_examples():
    pos = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    t = table(pos, 2)
    d = local_density(pos, t)
    # local radius 2, global radius 1 around the centroid
    np.testing.assert_allclose(d.ratio, [8.0, 8.0])
    vol = lambda r: 4 / 3 * np.pi * r**3
    assert d.ratio[0] == pytest.approx(vol(2.0) / vol(1.0))
    pos = np.random.default_rng(0).normal(size=(30, 3))
    t = table(pos, 6)
    np.testing.assert_allclose(local_density(pos * 10, t).ratio, local_density(pos, t).ratio, rtol=1e-9)
    c, r = global_bounding_sphere(pos)
    far = np.argmax(((pos - c) ** 2).sum(1))
    nt = NeighborTable(np.full((30, 1), far), np.zeros((30, 1)))
    q = local_density(pos, nt, np.zeros(3), r)
    assert q.ratio.shape == (30,)


def test_density_degenerate_flag():
    pos = np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0.0]])
    t = NeighborTable(np.array([[0, 1], [0, 1], [2, 2]]), np.zeros((3, 2)))
    d = local_density(pos, t)
    assert d.degenerate.tolist() == [True, True, True]
    np.testing.assert_array_equal(d.ratio, 0)


def test_color_features():
    col = np.array([[0.1, 0.2, 0.3], [0.5, 0.2, 0.3], [0.1, 0.6, 0.3]])
    t = NeighborTable(np.array([[0, 1, 2]] * 3), np.zeros((3, 3)))
    f = color_features(col, t)
    np.testing.assert_allclose(f.relative[0, 1], [0.4, 0, 0, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(f.variance[0], [0.16 / 3, 0.16 / 3, 0])
    comb = f.combined()
    assert comb.shape == (3, 3, 9)
    np.testing.assert_allclose(comb[1, 2, 6:], f.variance[1])


def test_uniform_color_zero_variance():
    col = np.full((5, 3), 0.4)
    f = color_features(col, table(np.random.default_rng(0).random((5, 3)), 3))
    np.testing.assert_array_equal(f.variance, 0)
    np.testing.assert_array_equal(f.relative[..., :3], 0)
