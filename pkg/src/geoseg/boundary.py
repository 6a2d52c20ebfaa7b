"""Boundary mining, label-distribution propagation and the contrastive boundary loss."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .spatial import NeighborTable, build_index, knn, knn_excluding_self

log = logging.getLogger(__name__)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def hard_labels(dist) -> np.ndarray:
    """Argmax per row; ties resolve to the lower class index."""
    return np.argmax(np.asarray(dist), axis=1)


def mine_boundaries(positions, labels, radius: float = 0.1) -> np.ndarray:
    """True where another point within ``radius`` carries a different label."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    labels = np.asarray(labels)
    index = build_index(positions)
    mask = np.zeros(len(index), dtype=bool)
    pairs = index.tree.query_pairs(radius * (1 + 1e-9) + 1e-12, output_type="ndarray")
    if len(pairs) == 0:
        return mask
    i, j = pairs[:, 0], pairs[:, 1]
    diff = index.points[i] - index.points[j]
    # the tree query is padded; the exact inclusive test happens here
    hit = ((diff * diff).sum(-1) <= float(radius) ** 2) & (labels[i] != labels[j])
    mask[i[hit]] = True
    mask[j[hit]] = True
    return mask


def propagate_label_distributions(parent_dist, parent_positions, child_positions, k: int = 16) -> np.ndarray:
    """Each child's distribution is the mean over its ``k`` nearest parents."""
    parent_dist = np.asarray(parent_dist, dtype=np.float64)
    if k > parent_dist.shape[0]:
        raise ValueError(f"k={k} exceeds the {parent_dist.shape[0]} parent points")
    table = knn(build_index(parent_positions), child_positions, k)
    return parent_dist[table.indices].mean(axis=1)


@dataclass(frozen=True)
class CblStats:
    boundary: int  # boundary points offered
    used: int  # boundary points contributing a term
    skipped: int  # boundary points without any same-label neighbor


def cbl_loss_with_stats(features: ad.Value, positions, labels, boundary_mask, k: int = 16, tau: float = 1.0,
                        neighbors: NeighborTable | None = None) -> tuple[ad.Value, CblStats]:
    """Contrastive boundary loss over the boundary points and its diagnostics.

    For boundary point i with k nearest other points N_i (``neighbors`` if
    given, else computed from ``positions``)::

        -log( sum_{j in N_i, l_j = l_i} exp(-|F_i - F_j| / tau)
              / sum_{j in N_i} exp(-|F_i - F_j| / tau) )

    averaged over boundary points that have at least one same-label
    neighbor. Points without one are skipped and counted.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    labels = np.asarray(labels)
    mask = np.asarray(boundary_mask, dtype=bool)
    if neighbors is None:
        neighbors = knn_excluding_self(build_index(positions), k)
    nbr = neighbors.indices
    b = np.flatnonzero(mask)
    pos = labels[nbr[b]] == labels[b][:, None]
    ok = pos.any(axis=1)
    stats = CblStats(int(len(b)), int(ok.sum()), int(len(b) - ok.sum()))
    if stats.skipped:
        log.debug("cbl: %d of %d boundary points have no positive neighbor", stats.skipped, stats.boundary)
    if stats.used == 0:
        if stats.boundary == 0:
            log.debug("cbl: no boundary points")
        return ad.constant(np.zeros((), dtype=features.dtype)), stats
    b, pos = b[ok], pos[ok].astype(features.dtype)
    fi = ad.gather_rows(features, b[:, None])
    fj = ad.gather_rows(features, nbr[b])
    s = ad.l2_norm(fj - fi, axis=-1) * (-1.0 / tau)
    # shifted log-sum-exp; the shifts are constants and cancel in the gradient
    m_all = s.data.max(axis=1, keepdims=True)
    m_pos = np.where(pos > 0, s.data, -np.inf).max(axis=1, keepdims=True)
    log_num = ad.log(ad.reduce_sum(ad.exp(s - m_pos) * pos, axis=1)) + m_pos[:, 0]
    log_den = ad.log(ad.reduce_sum(ad.exp(s - m_all), axis=1)) + m_all[:, 0]
    return -ad.reduce_mean(log_num - log_den), stats


def cbl_loss(features: ad.Value, positions, labels, boundary_mask, k: int = 16, tau: float = 1.0,
             neighbors: NeighborTable | None = None) -> ad.Value:
    return cbl_loss_with_stats(features, positions, labels, boundary_mask, k, tau, neighbors)[0]
