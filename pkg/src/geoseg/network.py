"""Encoder-decoder segmentation network built on the residual geometry module.

Geometry that does not depend on learned weights (FPS subsets, neighbor
tables, eigenvalues, polar features, density, color statistics, label
propagation, boundary masks) is computed once per input cloud by
:func:`build_stages`; :class:`GeoSegNet` then runs the learned part.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .boundary import hard_labels, mine_boundaries, one_hot, propagate_label_distributions
from .geomfeat import (color_features, eigenspace_knn, gcfr_features, global_bounding_sphere,
                       local_covariance_eigenvalues, local_density)
from .pointcloud import LabeledCloud
from .spatial import NeighborTable, build_index, farthest_point_sample, knn, knn_excluding_self

NUM_STAGES = 5
HEAD_GAIN = 0.1


@dataclass(frozen=True)
class NetworkConfig:
    num_classes: int = 13
    downsample: tuple[int, ...] = (1, 4, 4, 4, 4)
    widths: tuple[int, ...] = (32, 64, 128, 256, 512)
    width_scale: float = 1.0
    k1: int = 16
    k2: int = 32
    k_eigen: int = 16
    k_propagate: int = 16
    boundary_radius: float = 0.1
    lambda1: float = 0.1
    lambda2: float = 0.2
    tau: float = 1.0
    seed: int = 0
    use_eigen: bool = True
    use_gcfr: bool = True
    use_color: bool = True
    use_residual: bool = True
    use_positions: bool = True
    norm: bool = True  # channel normalization inside dense units
    min_points: int = 256

    def __post_init__(self):
        object.__setattr__(self, "downsample", tuple(int(d) for d in self.downsample))
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.downsample) != NUM_STAGES or len(self.widths) != NUM_STAGES:
            raise ValueError(f"need {NUM_STAGES} stage ratios and widths")
        if self.downsample[0] != 1 or math.prod(self.downsample) != 256:
            raise ValueError(f"stage ratios {self.downsample} must start at 1 and multiply to 256")
        if not 1 <= self.k1 < self.k2:
            raise ValueError("need 1 <= k1 < k2")
        if self.k_eigen < 1 or self.k_propagate < 1:
            raise ValueError("neighbor counts must be positive")
        if self.num_classes < 2:
            raise ValueError("need at least two classes")
        if min(self.stage_widths) < 2 or self.width_scale <= 0:
            raise ValueError("stage widths must be >= 2")
        if self.tau <= 0 or self.lambda1 < 0 or self.lambda2 < 0 or self.boundary_radius <= 0:
            raise ValueError("tau and radius must be positive; loss weights nonnegative")

    @property
    def stage_widths(self) -> tuple[int, ...]:
        return tuple(max(2, int(round(w * self.width_scale))) for w in self.widths)

    def stage_sizes(self, n: int) -> list[int]:
        sizes, denom = [], 1
        for d in self.downsample:
            denom *= d
            sizes.append(max(1, -(-n // denom)))
        return sizes

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise KeyError(f"unknown network config keys {sorted(unknown)}")
        return cls(**d)


# ------------------------------------------------------------------ geometry


@dataclass(eq=False)
class BranchGeometry:
    """Constant per-neighbor inputs of one receptive field."""

    k: int
    table: np.ndarray  # (M, k + k_eigen) Euclidean neighbors followed by eigen-space neighbors
    gcfr: np.ndarray  # (M, K', 3) dis, rel_phi, rel_theta
    eig_rows: np.ndarray  # (M, K', 3) eigenvalues of each grouped neighbor
    density: np.ndarray  # (M,)
    color: np.ndarray  # (M, K', 9)


@dataclass(eq=False)
class StageState:
    index: int
    point_indices: np.ndarray  # into the input cloud
    parent_indices: np.ndarray | None  # into the previous stage
    positions: np.ndarray
    colors: np.ndarray
    knn_k1: NeighborTable
    knn_k2: NeighborTable
    eig_table: NeighborTable
    eigenvalues: np.ndarray
    branches: tuple[BranchGeometry, BranchGeometry]
    cbl_table: NeighborTable | None
    up_indices: np.ndarray | None = None  # (M, 3) into the next coarser stage
    up_weights: np.ndarray | None = None
    label_dist: np.ndarray | None = None
    labels: np.ndarray | None = None
    boundary: np.ndarray | None = None
    features: ad.Value | None = None

    def __len__(self) -> int:
        return self.positions.shape[0]


def _branch(positions, colors, euclid: NeighborTable, eig_table: NeighborTable, eig, k, cfg, g_center, g_radius):
    table = euclid.concat(eig_table) if cfg.use_eigen else euclid
    gc = gcfr_features(positions, table).stacked()
    dens = local_density(positions, euclid, g_center, g_radius).ratio
    col = color_features(colors, table).combined()
    return BranchGeometry(k, table.indices, gc, eig[table.indices], dens, col)


def interpolation_weights(coarse_positions, fine_positions, k: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-distance weights over the ``k`` nearest coarse points.

    A fine point sitting exactly on a coarse point copies it.
    """
    k = min(k, len(coarse_positions))
    t = knn(build_index(coarse_positions), fine_positions, k)
    w = 1.0 / (t.distances + 1e-8)
    exact = t.distances[:, 0] == 0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    return t.indices, w / w.sum(axis=1, keepdims=True)


def build_stages(cloud: LabeledCloud, cfg: NetworkConfig, seed=None, with_labels: bool = True) -> list[StageState]:
    """FPS hierarchy plus every weight-independent input of every stage."""
    n = len(cloud)
    if n < cfg.min_points:
        raise ValueError(f"need at least {cfg.min_points} points, got {n}")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    g_center, g_radius = global_bounding_sphere(cloud.positions)
    if g_radius == 0:
        g_radius = 1.0
    sizes = cfg.stage_sizes(n)
    stages: list[StageState] = []
    idx = np.arange(n)
    parent = None
    for s, m in enumerate(sizes):
        if s > 0:
            prev = stages[-1]
            parent = farthest_point_sample(prev.positions, m, seed=int(rng.integers(2**31)))
            idx = prev.point_indices[parent]
        pos = cloud.positions[idx]
        col = cloud.colors[idx]
        index = build_index(pos)
        t1 = knn(index, pos, min(cfg.k1, m))
        t2 = knn(index, pos, min(cfg.k2, m))
        eig = local_covariance_eigenvalues(pos, t1)
        te = eigenspace_knn(eig, min(cfg.k_eigen, m))
        branches = tuple(_branch(pos, col, t, te, eig, t.k, cfg, g_center, g_radius) for t in (t1, t2))
        cbl = knn_excluding_self(index, min(cfg.k1, m - 1)) if m > 1 else None
        st = StageState(s, idx, parent, pos, col, t1, t2, te, eig, branches, cbl)
        if with_labels:
            if s == 0:
                st.label_dist = one_hot(cloud.labels, cloud.num_classes)
            else:
                prev = stages[-1]
                k = min(cfg.k_propagate, len(prev))
                st.label_dist = propagate_label_distributions(prev.label_dist, prev.positions, pos, k)
            st.labels = hard_labels(st.label_dist)
            st.boundary = mine_boundaries(pos, st.labels, cfg.boundary_radius)
        stages.append(st)
    for fine, coarse in zip(stages[:-1], stages[1:]):
        fine.up_indices, fine.up_weights = interpolation_weights(coarse.positions, fine.positions)
    return stages


# -------------------------------------------------------------------- layers


class ResidualBlock(ad.Module):
    """Two dense+norm+act units with an additive skip (linear map when widths differ)."""

    def __init__(self, n_in: int, n_out: int, rng, residual: bool = True, norm: bool = True):
        self.residual = residual
        self.first = ad.Dense(n_in, n_out, rng, norm=norm)
        if residual:
            self.second = ad.Dense(n_out, n_out, rng, norm=norm)
            self.skip = ad.Dense(n_in, n_out, rng, norm=False, act=False) if n_in != n_out else None

    def __call__(self, x: ad.Value) -> ad.Value:
        y = self.first(x)
        if not self.residual:
            return y
        y = self.second(y)
        return y + (self.skip(x) if self.skip is not None else x)


class AttentivePool(ad.Module):
    """Softmax-over-neighbors scores from one shared dense map, then a weighted sum."""

    def __init__(self, channels: int, rng):
        self.score = ad.Dense(channels, channels, rng, norm=False, act=False)

    def weights(self, g: ad.Value) -> ad.Value:
        return ad.softmax(self.score(g), axis=1)

    def __call__(self, g: ad.Value) -> ad.Value:
        return ad.reduce_sum(self.weights(g) * g, axis=1)


def attentive_pool(pool: AttentivePool, neighbor_feats: ad.Value) -> ad.Value:
    return pool(neighbor_feats)


class GeometryBranch(ad.Module):
    """Residual geometry module for one receptive field."""

    def __init__(self, in_features: int, width: int, cfg: NetworkConfig, rng):
        self.cfg = cfg
        geo = in_features + 3 * cfg.use_gcfr + 3 * cfg.use_eigen
        self.pre1 = ResidualBlock(geo, width, rng, cfg.use_residual, cfg.norm)
        ctx = width + 3 + 1 * cfg.use_gcfr + 9 * cfg.use_color
        self.pre2 = ResidualBlock(ctx, width, rng, cfg.use_residual, cfg.norm)
        self.pool = AttentivePool(width, rng)
        self.post = ResidualBlock(width, width, rng, cfg.use_residual, cfg.norm)

    def __call__(self, stage: StageState, geom: BranchGeometry, h: ad.Value) -> ad.Value:
        cfg = self.cfg
        m, kk = geom.table.shape
        dt = h.dtype
        parts = []
        if cfg.use_gcfr:
            parts.append(geom.gcfr.astype(dt))
        if cfg.use_eigen:
            parts.append(geom.eig_rows.astype(dt))
        parts.append(ad.gather_rows(h, geom.table))
        a = self.pre1(ad.concat(parts, axis=-1))
        center = stage.positions if cfg.use_positions else np.zeros_like(stage.positions)
        ctx = [a, np.broadcast_to(center[:, None, :], (m, kk, 3)).astype(dt)]
        if cfg.use_gcfr:
            ctx.append(np.broadcast_to(geom.density[:, None, None], (m, kk, 1)).astype(dt))
        if cfg.use_color:
            ctx.append(geom.color.astype(dt))
        g = self.pre2(ad.concat(ctx, axis=-1))
        return self.post(self.pool(g))


def residual_geometry_module(branch: GeometryBranch, stage: StageState, k_slot: int, h: ad.Value) -> ad.Value:
    """Per-point features of ``stage`` for receptive field slot 0 (K1) or 1 (K2)."""
    return branch(stage, stage.branches[k_slot], h)


def stage_input_features(stage: StageState, cfg: NetworkConfig) -> np.ndarray:
    """First-layer features: coordinates and eigenvalues (zeroed when disabled)."""
    pos = stage.positions if cfg.use_positions else np.zeros_like(stage.positions)
    eig = stage.eigenvalues if cfg.use_eigen else np.zeros_like(stage.eigenvalues)
    return np.concatenate([pos, eig], axis=1)


def nn_interpolate_up(coarse_feats: ad.Value, coarse_positions=None, fine_positions=None,
                      indices=None, weights=None) -> ad.Value:
    """Inverse-distance blend of the 3 nearest coarse features for every fine point."""
    if indices is None:
        indices, weights = interpolation_weights(coarse_positions, fine_positions)
    w = np.asarray(weights, dtype=coarse_feats.dtype)[:, :, None]
    return ad.reduce_sum(ad.gather_rows(coarse_feats, indices) * w, axis=1)


@dataclass(eq=False)
class NetworkOutput:
    stage_logits: list[ad.Value]  # stage 0 (finest) .. 4
    final_logits: ad.Value
    decoder_features: list[ad.Value]
    stages: list[StageState] = field(repr=False, default_factory=list)


class GeoSegNet(ad.Module):
    IN_FEATURES = 6

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        w = cfg.stage_widths
        self.encoders = []
        prev = self.IN_FEATURES
        for s in range(NUM_STAGES):
            self.encoders.append(_Pair(GeometryBranch(prev, w[s], cfg, rng), GeometryBranch(prev, w[s], cfg, rng)))
            prev = w[s]
        self.decoders = [None] * NUM_STAGES
        self.decoders[-1] = ad.Dense(w[-1], w[-1], rng, norm=cfg.norm)
        for s in range(NUM_STAGES - 2, -1, -1):
            self.decoders[s] = ad.Dense(w[s + 1] + w[s], w[s], rng, norm=cfg.norm)
        # classifier heads start small so untrained predictions are near uniform
        self.heads = [ad.Dense(w[s], cfg.num_classes, rng, norm=False, act=False, gain=HEAD_GAIN)
                      for s in range(NUM_STAGES)]
        self.final1 = ad.Dense(w[0], max(2, w[0] // 2), rng, norm=cfg.norm)
        self.final2 = ad.Dense(max(2, w[0] // 2), cfg.num_classes, rng, norm=False, act=False, gain=HEAD_GAIN)

    def encode(self, stages: list[StageState]) -> list[StageState]:
        h = None
        for s, (st, pair) in enumerate(zip(stages, self.encoders)):
            if s == 0:
                h = ad.constant(stage_input_features(st, self.cfg).astype(ad.get_default_dtype()))
            else:
                h = ad.gather_rows(stages[s - 1].features, st.parent_indices)
            f1 = residual_geometry_module(pair.k1, st, 0, h)
            f2 = residual_geometry_module(pair.k2, st, 1, h)
            st.features = f1 + f2
        return stages

    def forward(self, stages: list[StageState]) -> NetworkOutput:
        if len(stages) != NUM_STAGES:
            raise ValueError(f"expected {NUM_STAGES} stages")
        self.encode(stages)
        dec: list[ad.Value | None] = [None] * NUM_STAGES
        dec[-1] = self.decoders[-1](stages[-1].features)
        for s in range(NUM_STAGES - 2, -1, -1):
            st = stages[s]
            up = nn_interpolate_up(dec[s + 1], indices=st.up_indices, weights=st.up_weights)
            dec[s] = self.decoders[s](ad.concat([up, st.features], axis=-1))
        logits = [head(d) for head, d in zip(self.heads, dec)]
        final = self.final2(self.final1(dec[0]))
        return NetworkOutput(logits, final, dec, stages)

    def __call__(self, cloud: LabeledCloud, seed=None, with_labels: bool = True) -> NetworkOutput:
        return self.forward(build_stages(cloud, self.cfg, seed, with_labels))


class _Pair(ad.Module):
    def __init__(self, k1: GeometryBranch, k2: GeometryBranch):
        self.k1 = k1
        self.k2 = k2

    def __iter__(self):
        return iter((self.k1, self.k2))


def encode(cloud: LabeledCloud, cfg: NetworkConfig, net: GeoSegNet | None = None, seed=None) -> list[StageState]:
    net = net or GeoSegNet(cfg)
    return net.encode(build_stages(cloud, cfg, seed))


def forward(cloud: LabeledCloud, cfg: NetworkConfig, net: GeoSegNet, seed=None) -> NetworkOutput:
    if net.cfg != cfg:
        raise ValueError("parameters were built for a different config")
    return net(cloud, seed)
