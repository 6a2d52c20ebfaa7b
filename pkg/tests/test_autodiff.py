import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geoseg import autodiff as ad
from geoseg.gradcheck import _op_cases, check_op

OPS = list(_op_cases(np.random.default_rng(0)))
ELEMENTWISE = {"add", "sub", "mul", "div", "square", "exp", "log", "leaky_rect"}


@pytest.mark.parametrize("name", OPS)
@pytest.mark.parametrize("seed", [0, 1])
def test_op_gradients_match_central_differences(name, seed):
    tol = 1e-4 if name in ELEMENTWISE else 1e-3
    assert check_op(name, seed) < tol


def test_softmax_uniform():
    out = ad.softmax(ad.constant(np.zeros((1, 3))), axis=1)
    np.testing.assert_allclose(out.data, [[1 / 3] * 3], atol=1e-7)


@given(arrays(np.float64, (4, 6), elements=st.floats(-50, 50)))
def test_softmax_rows_are_distributions(x):
    with ad.default_dtype(np.float64):
        p = ad.softmax(ad.constant(x), axis=1).data
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-7)
    assert np.all(p >= 0) and np.all(p <= 1)


def test_softmax_open_interval_for_moderate_logits():
    p = ad.softmax(ad.constant(np.random.default_rng(0).normal(size=(5, 4)) * 3), axis=1).data
    assert np.all(p > 0) and np.all(p < 1)


def test_concat_and_gather_shapes():
    a = ad.constant(np.ones((5, 4, 3)))
    assert ad.concat([a, a], axis=-1).shape == (5, 4, 6)
    x = ad.constant(np.arange(12.0).reshape(4, 3))
    g = ad.gather_rows(x, np.arange(4)[:, None])
    assert g.shape == (4, 1, 3)
    np.testing.assert_array_equal(g.data[:, 0], x.data)


def test_shape_mismatch_names_both_shapes():
    with pytest.raises(ad.ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.add(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 5))))
    with pytest.raises(ad.ShapeError):
        ad.matmul(ad.constant(np.ones((2, 3))), ad.constant(np.ones((4, 5))))


def test_linear_gradient():
    x = np.array([1.0, -2.0, 3.0])
    w = ad.parameter(np.array([0.5, 0.1, -0.3]))
    ad.reduce_sum(w * x).backward()
    np.testing.assert_allclose(w.grad, x)


def test_unreachable_gradient_is_zero():
    a, b = ad.parameter(np.ones(3)), ad.parameter(np.ones(3))
    ad.zero_grad([a, b])
    ad.reduce_sum(a * 2.0).backward()
    np.testing.assert_array_equal(b.grad, 0)


def test_backward_requires_scalar():
    with pytest.raises(ad.ShapeError):
        (ad.parameter(np.ones(3)) * 2.0).backward()


def test_double_backward_accumulates_until_zero_grad():
    w = ad.parameter(np.array([1.0, 2.0]))
    loss = ad.reduce_sum(ad.square(w))
    loss.backward()
    loss.backward()
    np.testing.assert_allclose(w.grad, 2 * 2 * w.data)
    ad.zero_grad([w])
    loss.backward()
    np.testing.assert_allclose(w.grad, 2 * w.data)


def test_shared_node_visited_once():
    w = ad.parameter(np.array([3.0]))
    h = w * 2.0
    loss = ad.reduce_sum(h * h + h)
    loss.backward()
    # d/dw (4w^2 + 2w) = 8w + 2
    np.testing.assert_allclose(w.grad, [26.0])


def test_cross_entropy_examples():
    logits = np.zeros((7, 13))
    assert ad.cross_entropy(ad.constant(logits, ), np.arange(7)).item() == pytest.approx(np.log(13), abs=1e-6)
    sure = np.full((3, 4), 0.0)
    sure[np.arange(3), [1, 2, 3]] = 1e6
    with ad.default_dtype(np.float64):
        assert ad.cross_entropy(ad.constant(sure), np.array([1, 2, 3])).item() == pytest.approx(0.0, abs=1e-9)


def test_cross_entropy_mask():
    logits = ad.constant(np.array([[0.0, 0.0], [5.0, -5.0]]))
    masked = ad.cross_entropy(logits, np.array([0, 1]), ignore_mask=np.array([False, True]))
    assert masked.item() == pytest.approx(np.log(2), abs=1e-6)
    with pytest.raises(ValueError):
        ad.cross_entropy(logits, np.array([0, 1]), ignore_mask=np.array([True, True]))


@given(st.integers(0, 10_000))
def test_normalization_training_statistics(seed):
    rng = np.random.default_rng(seed)
    with ad.default_dtype(np.float64):
        x = ad.constant(rng.normal(3.0, 5.0, size=(20, 6, 4)))
        y = ad.normalize_channels(x, ad.parameter(np.ones(4)), ad.parameter(np.zeros(4))).data
    mu = y.mean(axis=(0, 1))
    var = y.var(axis=(0, 1))
    assert np.all(np.abs(mu) < 1e-5)
    assert np.all(np.abs(var - 1) < 1e-3)


def test_normalization_running_buffers():
    rm, rv = np.zeros(2), np.ones(2)
    x = ad.constant(np.array([[1.0, 10.0], [3.0, 14.0]]))
    ad.normalize_channels(x, ad.parameter(np.ones(2)), ad.parameter(np.zeros(2)), rm, rv, training=True)
    np.testing.assert_allclose(rm, [0.2, 1.2])
    # unbiased batch variance (2, 8), momentum 0.1
    np.testing.assert_allclose(rv, [0.9 + 0.2, 0.9 + 0.8])
    y = ad.normalize_channels(x, ad.parameter(np.ones(2)), ad.parameter(np.zeros(2)), rm, rv, training=False)
    np.testing.assert_allclose(y.data, (x.data - rm) / np.sqrt(rv + 1e-5), rtol=1e-6)


def test_dense_parameter_count_and_determinism():
    a = ad.Dense(5, 7, np.random.default_rng(3))
    b = ad.Dense(5, 7, np.random.default_rng(3))
    assert sum(p.data.size for p in a.parameters()) == 5 * 7 + 7 + 2 * 7
    assert sum(p.data.size for p in ad.Dense(5, 7, np.random.default_rng(0), norm=False).parameters()) == 42
    np.testing.assert_array_equal(a.weight.data, b.weight.data)
    bound = np.sqrt(6 / 12)
    assert np.abs(a.weight.data).max() <= bound


def test_leaky_rect_slope():
    y = ad.leaky_rect(ad.constant(np.array([-2.0, 3.0])))
    np.testing.assert_allclose(y.data, [-0.02, 3.0])


def test_adam_zero_gradient_fixed_point():
    p = ad.parameter(np.array([1.0, -2.0]))
    opt = ad.Adam([p])
    ad.optimizer_step(opt, [p], [np.zeros(2)])
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_descends_against_gradient():
    p = ad.parameter(np.array([0.0, 0.0]))
    opt = ad.Adam([p], lr=1e-2)
    for _ in range(50):
        ad.optimizer_step(opt, [p], [np.array([1.0, -3.0])])
    assert p.data[0] < 0 < p.data[1]
    # first bias-corrected step has magnitude lr in every coordinate
    q = ad.parameter(np.array([0.0]))
    ad.optimizer_step(ad.Adam([q], lr=1e-3), [q], [np.array([5.0])])
    assert q.data[0] == pytest.approx(-1e-3, rel=1e-4)


def test_adam_deterministic():
    out = []
    for _ in range(2):
        p = ad.parameter(np.linspace(-1, 1, 5))
        opt = ad.Adam([p])
        g = np.random.default_rng(9)
        for _ in range(10):
            ad.optimizer_step(opt, [p], [g.normal(size=5)])
        out.append(p.data.copy())
    np.testing.assert_array_equal(out[0], out[1])


def test_checkpoint_roundtrip(tmp_path):
    tensors = {"a.weight": np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32),
               "b": np.arange(5, dtype=np.float32), "s": np.array(2.5, dtype=np.float32)}
    path = tmp_path / "m.ckpt"
    ad.save_checkpoint(path, tensors, {"k": [1, 2]})
    back, cfg = ad.load_checkpoint(path)
    assert cfg == {"k": [1, 2]}
    for k, v in tensors.items():
        np.testing.assert_array_equal(back[k], v)
    raw = path.read_bytes()
    assert raw[0] == ad.CHECKPOINT_VERSION
    path.write_bytes(bytes([99]) + raw[1:])
    with pytest.raises(ValueError):
        ad.load_checkpoint(path)


def test_state_dict_roundtrip():
    a = ad.Dense(3, 2, np.random.default_rng(0))
    b = ad.Dense(3, 2, np.random.default_rng(1))
    a.running_mean[:] = [1.0, 2.0]
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(b.weight.data, a.weight.data)
    np.testing.assert_array_equal(b.running_mean, [1.0, 2.0])
    with pytest.raises(KeyError):
        b.load_state_dict({"weight": a.weight.data})


def test_kink_tape_freezes_branches():
    x = ad.parameter(np.array([1e-6, -1e-6]))
    with ad.kink_tape("record"):
        ad.leaky_rect(x)
    x.data = -x.data
    with ad.kink_tape("replay"):
        y = ad.leaky_rect(x)
    # branches from the recording: first positive, second negative
    np.testing.assert_allclose(y.data, [-1e-6, 1e-8])
