import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from geoseg import autodiff as ad
from geoseg.boundary import (
    cbl_loss,
    cbl_loss_with_stats,
    hard_labels,
    mine_boundaries,
    one_hot,
    propagate_label_distributions,
)
from geoseg.spatial import NeighborTable
from oracles import brute_boundary, brute_cbl


def half_planes():
    xs = (np.arange(-10, 10) + 0.5) * 0.05
    g = np.array([(x, y, 0.0) for x in xs for y in np.arange(6) * 0.05])
    return g, (g[:, 0] > 0).astype(int)


def test_half_plane_boundary_band():
    pos, labels = half_planes()
    mask = mine_boundaries(pos, labels, 0.1)
    np.testing.assert_array_equal(mask, brute_boundary(pos, labels, 0.1))
    np.testing.assert_array_equal(mask, np.abs(pos[:, 0]) <= 0.1 + 1e-9)


def test_uniform_and_isolated():
    rng = np.random.default_rng(0)
    pos = rng.uniform(size=(50, 3))
    assert not mine_boundaries(pos, np.zeros(50, int)).any()
    far = np.array([[0.0, 0, 0], [5.0, 0, 0], [0.0, 5, 0]])
    assert not mine_boundaries(far, np.array([0, 1, 2]), 0.1).any()
    with pytest.raises(ValueError):
        mine_boundaries(pos, np.zeros(50, int), 0.0)


def test_boundary_radius_inclusive():
    pos = np.array([[0.0, 0, 0], [0.5, 0, 0]])
    assert mine_boundaries(pos, [0, 1], 0.5).all()
    assert not mine_boundaries(pos, [0, 1], 0.49).any()


@given(st.integers(0, 10**6), st.integers(2, 120), st.integers(2, 4))
@settings(max_examples=30)
def test_boundary_matches_brute_force(seed, n, c):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, 1, size=(n, 3))
    labels = rng.integers(0, c, n)
    np.testing.assert_array_equal(mine_boundaries(pos, labels, 0.2), brute_boundary(pos, labels, 0.2))


def test_hard_labels_tie_to_lower():
    np.testing.assert_array_equal(hard_labels([[0.5, 0.5], [0.2, 0.8], [1 / 3, 1 / 3]]), [0, 1, 0])


def test_propagation_examples():
    rng = np.random.default_rng(1)
    parents = rng.uniform(size=(30, 3))
    d = propagate_label_distributions(one_hot(np.full(30, 3), 5), parents, rng.uniform(size=(7, 3)), k=4)
    np.testing.assert_array_equal(d, one_hot(np.full(7, 3), 5))
    p2 = np.array([[0.0, 0, 0], [1.0, 0, 0], [9.0, 0, 0]])
    d2 = propagate_label_distributions(one_hot([0, 1, 2], 4), p2, np.array([[0.4, 0, 0]]), k=2)
    np.testing.assert_allclose(d2, [[0.5, 0.5, 0, 0]])
    with pytest.raises(ValueError):
        propagate_label_distributions(one_hot([0, 1, 2], 4), p2, p2, k=4)


@given(st.integers(0, 10**6))
@settings(max_examples=20)
def test_propagation_rows_on_simplex(seed):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(size=(200, 3))
    dist = one_hot(rng.integers(0, 4, 200), 4)
    for m in (50, 12, 3):
        child = pos[rng.choice(len(pos), m, replace=False)]
        dist = propagate_label_distributions(dist, pos, child, k=min(16, len(pos)))
        pos = child
        np.testing.assert_allclose(dist.sum(1), 1.0, atol=1e-6)
        assert (dist >= 0).all()


def test_propagation_keeps_balance():
    rng = np.random.default_rng(2)
    pos = rng.uniform(size=(2000, 3))
    dist = one_hot(rng.permutation(np.arange(2000) % 2), 2)
    child = pos[rng.choice(2000, 500, replace=False)]
    mean = propagate_label_distributions(dist, pos, child, k=16).mean(0)
    np.testing.assert_allclose(mean, [0.5, 0.5], atol=0.03)


def table(rows):
    rows = np.asarray(rows)
    return NeighborTable(rows, np.zeros(rows.shape))


def test_cbl_all_same_is_zero():
    f = ad.constant(np.random.default_rng(0).normal(size=(4, 3)))
    loss = cbl_loss(f, None, [0, 0, 0, 0], [True] * 4, k=2, neighbors=table([[1, 2], [0, 2], [0, 1], [0, 1]]))
    assert abs(loss.item()) < 1e-12


def test_cbl_half_same_identical_features_is_ln2():
    f = ad.constant(np.ones((3, 4)))
    loss = cbl_loss(f, None, [0, 0, 1], [True, False, False], k=2, neighbors=table([[1, 2], [0, 2], [0, 1]]))
    assert abs(loss.item() - np.log(2)) < 1e-6


def test_cbl_skips_and_errors():
    pos = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.5, 0, 0]])
    f = ad.constant(np.zeros((3, 2)))
    loss, stats = cbl_loss_with_stats(f, pos, [0, 1, 1], [True, True, False], k=1)
    assert stats.boundary == 2 and stats.skipped == 1 and stats.used == 1
    assert loss.item() == pytest.approx(0.0)
    zero, stats = cbl_loss_with_stats(f, pos, [0, 1, 1], [False] * 3, k=1)
    assert zero.item() == 0.0 and stats.boundary == 0
    with pytest.raises(ValueError):
        cbl_loss(f, pos, [0, 1, 1], [True] * 3, k=1, tau=0.0)


@given(st.integers(0, 10**6), st.integers(5, 200), st.sampled_from([0.3, 1.0, 2.5]))
@settings(max_examples=30)
def test_cbl_matches_triple_loop(seed, n, tau):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(size=(n, 3))
    labels = rng.integers(0, 3, n)
    feats = rng.normal(size=(n, 6))
    mask = rng.random(n) < 0.5
    k = min(8, n - 1)
    with ad.default_dtype(np.float64):
        got = cbl_loss(ad.constant(feats), pos, labels, mask, k=k, tau=tau).item()
    assert got >= 0
    assert abs(got - brute_cbl(feats, pos, labels, mask, k, tau)) < 1e-6


def test_cbl_descent_on_three_points():
    pos = np.array([[0.0, 0, 0], [0.1, 0, 0], [0.0, 0.1, 0]])
    labels = [0, 0, 1]
    mask = [True, False, False]
    f0 = np.array([[0.0, 0.0], [1.0, 0.5], [0.4, -0.3]])

    def loss_at(f):
        with ad.default_dtype(np.float64):
            p = ad.parameter(f)
            return cbl_loss(p, pos, labels, mask, k=2, tau=0.5), p

    base, p = loss_at(f0)
    base.backward()
    prev = base.item()
    for step in (1e-3, 1e-2, 5e-2):
        cur = loss_at(f0 - step * p.grad)[0].item()
        assert cur < prev
        prev = cur
    # pull the positive in, push the negative out
    toward = f0.copy()
    toward[1] *= 0.5
    away = f0.copy()
    away[2] *= 2.0
    assert loss_at(toward)[0].item() < base.item()
    assert loss_at(away)[0].item() < base.item()


def test_cbl_gradient_ten_points():
    from geoseg.gradcheck import check_cbl

    assert check_cbl(0) < 1e-3
    assert check_cbl(1) < 1e-3
