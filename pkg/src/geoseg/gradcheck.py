"""Central-difference gradient suite: every op, the pooling and geometry modules, the network and the boundary loss.

Everything runs in float64 with step 1e-4. Each case returns the largest
relative error over its parameters (see :func:`autodiff.relative_error`).
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .boundary import cbl_loss
from .network import AttentivePool, GeoSegNet, GeometryBranch, NetworkConfig, build_stages, stage_input_features
from .pointcloud import generate_scene, random_box_scene, sample_column
from .training import center_xy, multi_stage_loss, stage_targets

EPS = 1e-4


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x) + 0.0


def _op_cases(rng) -> dict:
    """name -> (loss builder, params)."""
    P = ad.parameter
    a, b = P(rng.normal(size=(4, 5))), P(rng.normal(size=(4, 5)))
    col = P(rng.normal(size=(1, 5)))
    pos = P(rng.uniform(0.5, 2.0, size=(4, 5)))
    m3 = P(rng.normal(size=(3, 4, 5)))
    w = P(rng.normal(size=(5, 6)))
    kinked = P(_away_from_zero(rng, (4, 5)))
    table = rng.integers(0, 4, size=(6, 3))
    gamma, beta = P(rng.uniform(0.5, 1.5, size=5)), P(rng.normal(size=5))
    rm, rv = rng.normal(size=5), rng.uniform(0.5, 2.0, size=5)
    labels = rng.integers(0, 5, size=4)
    ws = {}

    def proj(key, y):
        if key not in ws:
            ws[key] = rng.normal(size=y.shape)
        return ad.reduce_sum(y * ws[key])

    return {
        "add": (lambda: proj("add", a + col), [a, col]),
        "sub": (lambda: proj("sub", a - b), [a, b]),
        "mul": (lambda: proj("mul", a * b), [a, b]),
        "div": (lambda: proj("div", a / pos), [a, pos]),
        "square": (lambda: proj("square", ad.square(a)), [a]),
        "exp": (lambda: proj("exp", ad.exp(a)), [a]),
        "log": (lambda: proj("log", ad.log(pos)), [pos]),
        "leaky_rect": (lambda: proj("leaky", ad.leaky_rect(kinked)), [kinked]),
        "matmul": (lambda: proj("matmul", ad.matmul(m3, w)), [m3, w]),
        "concat": (lambda: proj("concat", ad.concat([a, b], axis=0)), [a, b]),
        "reshape": (lambda: proj("reshape", ad.reshape(a, (2, 10))), [a]),
        "broadcast_to": (lambda: proj("bcast", ad.broadcast_to(col, (3, 5))), [col]),
        "index": (lambda: proj("index", a[1:3, ::2]), [a]),
        "gather_rows": (lambda: proj("gather", ad.gather_rows(a, table)), [a]),
        "reduce_sum": (lambda: proj("rsum", ad.reduce_sum(m3, axis=1)), [m3]),
        "reduce_mean": (lambda: proj("rmean", ad.reduce_mean(m3, axis=(0, 2))), [m3]),
        "reduce_max": (lambda: proj("rmax", ad.reduce_max(m3, axis=1)), [m3]),
        "softmax": (lambda: proj("softmax", ad.softmax(m3, axis=1)), [m3]),
        "log_softmax": (lambda: proj("logsoftmax", ad.log_softmax(a, axis=-1)), [a]),
        "l2_norm": (lambda: proj("l2", ad.l2_norm(m3, axis=-1)), [m3]),
        "normalize_train": (lambda: proj("bn", ad.normalize_channels(m3, gamma, beta)), [m3, gamma, beta]),
        "normalize_eval": (lambda: proj("bn_eval", ad.normalize_channels(m3, gamma, beta, rm, rv, training=False)),
                           [m3, gamma, beta]),
        "cross_entropy": (lambda: ad.cross_entropy(a, labels), [a]),
    }


def _column(n: int, seed: int):
    scene = generate_scene(random_box_scene(seed, n_boxes=4))
    col = sample_column(scene, n, 2.0, seed=seed)
    return col.with_positions(center_xy(col.positions))


def _tiny_config(**kw) -> NetworkConfig:
    base = dict(num_classes=2, width_scale=0.125, k1=4, k2=8, k_eigen=4, k_propagate=4, min_points=64)
    base.update(kw)
    return NetworkConfig(**base)


def _perturb(params, rng, scale=0.1):
    # move off the initial symmetric point (zero biases, unit gains)
    for p in params:
        p.data = p.data + rng.normal(0.0, scale, p.shape)


def check_op(name: str, seed: int = 0) -> float:
    with ad.default_dtype(np.float64):
        fn, params = _op_cases(np.random.default_rng(seed))[name]
        return max(ad.check_gradients(fn, params, eps=EPS))


def check_attentive_pool(seed: int = 0) -> float:
    with ad.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        pool = AttentivePool(6, rng)
        x = ad.parameter(rng.normal(size=(5, 4, 6)))
        w = rng.normal(size=(5, 6))
        params = [x] + pool.parameters()
        return max(ad.check_gradients(lambda: ad.reduce_sum(pool(x) * w), params, eps=EPS))


def check_geometry_module(seed: int = 0, n: int = 64) -> float:
    with ad.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        cfg = _tiny_config(seed=seed)
        stages = build_stages(_column(n, seed), cfg, seed=seed)
        st = stages[0]
        branch = GeometryBranch(GeoSegNet.IN_FEATURES, 6, cfg, rng)
        _perturb(branch.parameters(), rng)
        h = ad.parameter(stage_input_features(st, cfg))
        w = rng.normal(size=(len(st.positions), 6))
        params = [h] + branch.parameters()
        return max(ad.check_gradients(lambda: ad.reduce_sum(branch(st, st.branches[0], h) * w), params, eps=EPS,
                                      max_entries=4, seed=seed))


def check_network(seed: int = 0, n: int = 64, max_entries: int = 3) -> float:
    """Full multi-stage loss of an untrained network on an ``n``-point column."""
    with ad.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        cfg = _tiny_config(seed=seed)
        net = GeoSegNet(cfg)
        _perturb(net.parameters(), rng)
        stages = build_stages(_column(n, seed), cfg, seed=seed)
        targets = stage_targets(stages)

        def loss():
            out = net.forward(stages)
            return multi_stage_loss(out, stages[0].labels, targets, cfg.lambda1, cfg.lambda2, cfg.tau, cfg.k1)[0]

        return max(ad.check_gradients(loss, net.parameters(), eps=EPS, max_entries=max_entries, seed=seed))


def check_cbl(seed: int = 0, n: int = 10) -> float:
    with ad.default_dtype(np.float64):
        rng = np.random.default_rng(seed)
        pos = rng.uniform(0, 1, size=(n, 3))
        labels = (pos[:, 0] > 0.5).astype(int)
        labels[:2] = [0, 1]
        feats = ad.parameter(rng.normal(size=(n, 4)))
        mask = np.ones(n, dtype=bool)
        return max(ad.check_gradients(lambda: cbl_loss(feats, pos, labels, mask, k=4, tau=0.7), [feats], eps=EPS))


def run_suite(seed: int = 0) -> list[tuple[str, float]]:
    names = list(_op_cases(np.random.default_rng(seed)))
    out = [(f"op:{n}", check_op(n, seed)) for n in names]
    out.append(("attentive_pool", check_attentive_pool(seed)))
    out.append(("residual_geometry_module", check_geometry_module(seed)))
    out.append(("network_64_points", check_network(seed)))
    out.append(("cbl_loss", check_cbl(seed)))
    return out
