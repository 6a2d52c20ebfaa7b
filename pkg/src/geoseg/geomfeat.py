"""Hand-crafted per-point geometry and color features.

All inputs are offsets from a center point, so every output is
translation invariant. Eigenvalues are invariant to any rotation; distances
and the centroid-relative angles are invariant to rotation about z.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .spatial import NeighborTable, build_index, knn


@dataclass(frozen=True, eq=False)
class GcfrFeatures:
    dis: np.ndarray  # (N, K)
    phi: np.ndarray  # (N, K) raw azimuth of each offset
    theta: np.ndarray  # (N, K) raw elevation
    alpha: np.ndarray  # (N,) centroid azimuth
    beta: np.ndarray  # (N,) centroid elevation
    rel_phi: np.ndarray  # (N, K) wrap(phi - alpha)
    rel_theta: np.ndarray  # (N, K) wrap(theta - beta)

    def stacked(self) -> np.ndarray:
        """(N, K, 3) array of (dis, rel_phi, rel_theta)."""
        return np.stack([self.dis, self.rel_phi, self.rel_theta], axis=-1)


@dataclass(frozen=True, eq=False)
class LocalDensity:
    ratio: np.ndarray  # (N,) (local radius / global radius)**3
    degenerate: np.ndarray  # (N,) bool, local radius == 0
    global_center: np.ndarray
    global_radius: float


@dataclass(frozen=True, eq=False)
class ColorFeatures:
    relative: np.ndarray  # (N, K, 6): (f_j - f_i) ++ f_i
    variance: np.ndarray  # (N, 3)

    def combined(self) -> np.ndarray:
        """(N, K, 9): per-neighbor features with the variance repeated on every row."""
        n, k, _ = self.relative.shape
        var = np.broadcast_to(self.variance[:, None, :], (n, k, 3))
        return np.concatenate([self.relative, var], axis=-1)


def wrap_angle(a):
    """Map angles into (-pi, pi]."""
    out = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    return np.where(out <= -np.pi, out + 2.0 * np.pi, out)


def symmetric_eigvals3(c: np.ndarray) -> np.ndarray:
    """Eigenvalues of symmetric 3x3 matrices, descending, via the trigonometric solution of the characteristic cubic.

    ``c`` has shape (..., 3, 3). No clamping here.
    """
    c = np.asarray(c, dtype=np.float64)
    a00, a11, a22 = c[..., 0, 0], c[..., 1, 1], c[..., 2, 2]
    a01, a02, a12 = c[..., 0, 1], c[..., 0, 2], c[..., 1, 2]
    q = (a00 + a11 + a22) / 3.0
    off = a01 * a01 + a02 * a02 + a12 * a12
    d0, d1, d2 = a00 - q, a11 - q, a22 - q
    p2 = d0 * d0 + d1 * d1 + d2 * d2 + 2.0 * off
    p = np.sqrt(p2 / 6.0)
    safe = p > 0
    inv = np.where(safe, 1.0 / np.where(safe, p, 1.0), 0.0)
    b00, b11, b22 = d0 * inv, d1 * inv, d2 * inv
    b01, b02, b12 = a01 * inv, a02 * inv, a12 * inv
    det_b = (
        b00 * (b11 * b22 - b12 * b12)
        - b01 * (b01 * b22 - b12 * b02)
        + b02 * (b01 * b12 - b11 * b02)
    )
    r = np.clip(det_b / 2.0, -1.0, 1.0)
    ang = np.arccos(r) / 3.0
    e1 = q + 2.0 * p * np.cos(ang)
    e3 = q + 2.0 * p * np.cos(ang + 2.0 * np.pi / 3.0)
    e2 = 3.0 * q - e1 - e3
    return np.stack([e1, e2, e3], axis=-1)


def neighbor_offsets(positions, neighbors: NeighborTable) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    return pos[neighbors.indices] - pos[:, None, :]


def local_covariance(positions, neighbors: NeighborTable) -> np.ndarray:
    """(N, 3, 3) scatter matrices M M^T of neighbor offsets (no mean removal)."""
    m = neighbor_offsets(positions, neighbors)
    return np.einsum("nki,nkj->nij", m, m)


def local_covariance_eigenvalues(positions, neighbors: NeighborTable) -> np.ndarray:
    """(N, 3) eigenvalues of the local offset scatter, clamped at 0, sorted descending."""
    ev = symmetric_eigvals3(local_covariance(positions, neighbors))
    ev = np.maximum(ev, 0.0)
    return -np.sort(-ev, axis=-1)


def eigenspace_knn(eig, k: int) -> NeighborTable:
    """Exact KNN among points in (lambda1, lambda2, lambda3) space."""
    eig = np.asarray(eig, dtype=np.float64)
    return knn(build_index(eig), eig, k)


def _azimuth_elevation(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    flat = (x == 0) & (y == 0)
    # atan2(+-0, -0) is +-pi; a zero horizontal offset is pinned to 0 instead
    phi = np.where(flat, 0.0, np.arctan2(y, x))
    horiz = np.hypot(x, y)
    theta = np.where(flat & (z == 0), 0.0, np.arctan2(z, horiz))
    return phi, theta


def gcfr_features(positions, neighbors: NeighborTable) -> GcfrFeatures:
    """Distances and centroid-relative polar angles of every neighbor offset.

    A neighbor coinciding with its center has raw angles 0 and relative
    angles 0; its direction is undefined so it carries no orientation.
    """
    off = neighbor_offsets(positions, neighbors)
    dis = np.sqrt((off * off).sum(-1))
    phi, theta = _azimuth_elevation(off)
    centroid_off = off.mean(axis=1)
    alpha, beta = _azimuth_elevation(centroid_off)
    zero = dis == 0
    rel_phi = np.where(zero, 0.0, wrap_angle(phi - alpha[:, None]))
    rel_theta = np.where(zero, 0.0, wrap_angle(theta - beta[:, None]))
    return GcfrFeatures(dis, phi, theta, alpha, beta, rel_phi, rel_theta)


def global_bounding_sphere(positions) -> tuple[np.ndarray, float]:
    """Centroid-centered sphere covering every point."""
    pos = np.asarray(positions, dtype=np.float64)
    center = pos.mean(axis=0)
    radius = float(np.sqrt(((pos - center) ** 2).sum(-1).max()))
    return center, radius


def local_density(positions, neighbors: NeighborTable, global_center=None, global_radius=None) -> LocalDensity:
    """Volume ratio of each point's neighbor sphere to the cloud's bounding sphere."""
    if global_center is None or global_radius is None:
        global_center, global_radius = global_bounding_sphere(positions)
    if not global_radius > 0:
        raise ValueError("global radius must be positive")
    off = neighbor_offsets(positions, neighbors)
    local = np.sqrt((off * off).sum(-1)).max(axis=1)
    ratio = (local / global_radius) ** 3
    return LocalDensity(ratio, local == 0, np.asarray(global_center, float), float(global_radius))


def color_features(colors, neighbors: NeighborTable) -> ColorFeatures:
    col = np.asarray(colors, dtype=np.float64)
    nb = col[neighbors.indices]
    center = col[:, None, :]
    rel = nb - center
    relative = np.concatenate([rel, np.broadcast_to(center, rel.shape)], axis=-1)
    variance = (rel * rel).mean(axis=1)
    return ColorFeatures(relative, variance)
