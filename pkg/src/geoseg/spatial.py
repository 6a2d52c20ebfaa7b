"""Exact KNN / radius queries and farthest point sampling.

The tree itself is scipy's cKDTree. It is used only to propose candidates;
final distances are recomputed here as ``sum((q - p)**2)`` in float64 and
ranked by ``(distance, index)``, so ties always resolve to the lower index
and results agree bit-for-bit with a brute-force scan.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True, eq=False)
class SpatialIndex:
    points: np.ndarray  # (M, 3) float64
    tree: cKDTree

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True, eq=False)
class NeighborTable:
    indices: np.ndarray  # (Q, K) int64
    distances: np.ndarray  # (Q, K) float64, Euclidean

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def __len__(self) -> int:
        return self.indices.shape[0]

    def concat(self, other: "NeighborTable") -> "NeighborTable":
        return NeighborTable(
            np.concatenate([self.indices, other.indices], axis=1),
            np.concatenate([self.distances, other.distances], axis=1),
        )


def build_index(points) -> SpatialIndex:
    pts = np.array(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1:
        raise ValueError(f"expected (M, D) points with M >= 1, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("non-finite coordinate")
    pts.setflags(write=False)
    return SpatialIndex(pts, cKDTree(pts, balanced_tree=True, compact_nodes=True))


def _sq_dist(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    diff = q - p
    return (diff * diff).sum(axis=-1)


def _rank(cand: np.ndarray, sq: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Sort by (sq, index) along the last axis and keep the first k entries."""
    o1 = np.argsort(cand, axis=-1, kind="stable")
    cand = np.take_along_axis(cand, o1, axis=-1)
    sq = np.take_along_axis(sq, o1, axis=-1)
    o2 = np.argsort(sq, axis=-1, kind="stable")
    cand = np.take_along_axis(cand, o2, axis=-1)
    sq = np.take_along_axis(sq, o2, axis=-1)
    return cand[..., :k], sq[..., :k]


def knn(index: SpatialIndex, queries, k: int) -> NeighborTable:
    """Exact k nearest neighbors, rows sorted by distance then index."""
    q = np.asarray(queries, dtype=np.float64).reshape(-1, index.points.shape[1])
    m = len(index)
    if k < 1 or k > m:
        raise ValueError(f"k={k} must lie in [1, {m}]")
    nq = q.shape[0]
    if nq == 0:
        return NeighborTable(np.zeros((0, k), np.int64), np.zeros((0, k)))
    kk = min(m, k + 8)
    dist, cand = index.tree.query(q, k=kk)
    cand = np.asarray(cand, dtype=np.int64).reshape(nq, kk)
    dist = np.asarray(dist).reshape(nq, kk)
    sq = _sq_dist(q[:, None, :], index.points[cand])
    idx, sq_k = _rank(cand, sq, k)
    if kk < m:
        # a row is settled when its k-th distance sits clearly inside the
        # candidate horizon; anything closer than the horizon was returned.
        horizon = dist[:, -1]
        kth = np.sqrt(sq_k[:, -1])
        unsettled = np.flatnonzero(kth >= horizon * (1 - 1e-9) - 1e-12)
        for r in unsettled:
            ball = np.asarray(index.tree.query_ball_point(q[r], horizon[r] * (1 + 1e-9) + 1e-12), np.int64)
            s = _sq_dist(q[r], index.points[ball])
            i_r, s_r = _rank(ball, s, k)
            idx[r], sq_k[r] = i_r, s_r
    return NeighborTable(idx, np.sqrt(sq_k))


def radius_neighbors(index: SpatialIndex, queries=None, r: float = 0.1) -> list[np.ndarray]:
    """All indexed points within distance ``r`` (inclusive), sorted by (distance, index).

    With ``queries=None`` the indexed points query themselves and each
    point's own index is left out.
    """
    if not r > 0:
        raise ValueError("radius must be positive")
    self_query = queries is None
    q = index.points if self_query else np.asarray(queries, dtype=np.float64).reshape(-1, index.points.shape[1])
    balls = index.tree.query_ball_point(q, r * (1 + 1e-9) + 1e-12)
    r2 = float(r) * float(r)
    out = []
    for i, ball in enumerate(balls):
        ball = np.asarray(ball, dtype=np.int64)
        s = _sq_dist(q[i], index.points[ball])
        keep = s <= r2
        if self_query:
            keep &= ball != i
        ball, s = ball[keep], s[keep]
        out.append(_rank(ball, s, len(ball))[0])
    return out


def knn_excluding_self(index: SpatialIndex, k: int) -> NeighborTable:
    """k nearest *other* indexed points for every indexed point."""
    m = len(index)
    if k < 1 or k > m - 1:
        raise ValueError(f"k={k} must lie in [1, {m - 1}]")
    t = knn(index, index.points, k + 1)
    rows = np.arange(m)[:, None]
    is_self = t.indices == rows
    # drop the self column, or the last column when duplicates crowded self out
    drop = np.where(is_self.any(axis=1), is_self.argmax(axis=1), k)
    keep = np.ones_like(is_self)
    keep[np.arange(m), drop] = False
    return NeighborTable(t.indices[keep].reshape(m, k), t.distances[keep].reshape(m, k))


def farthest_point_sample(points, m: int, seed=None) -> np.ndarray:
    """Greedy FPS. The first pick is ``rng.integers(M)``; ties go to the lower index."""
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if m < 1 or m > n:
        raise ValueError(f"m={m} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    picks = np.empty(m, dtype=np.int64)
    picks[0] = rng.integers(n)
    mind = _sq_dist(pts, pts[picks[0]])
    mind[picks[0]] = -1.0
    for t in range(1, m):
        nxt = int(np.argmax(mind))
        picks[t] = nxt
        np.minimum(mind, _sq_dist(pts, pts[nxt]), out=mind)
        mind[nxt] = -1.0
    return picks
