"""Grouping locations by the similarity of their fitted reaction parameters.

Each location is described by its growth rates, capacities, and flattened
interaction matrix; the feature vectors are z-scored, projected to their top
two principal components, and partitioned by restarted k-means. The 2-D
projection is deterministic (a stochastic manifold embedding would not be),
which keeps the whole selection loop reproducible; the substitution is noted
in reports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import GroupAssignment, ReactionParams

KMEANS_RESTARTS = 50
KMEANS_MAX_ITER = 200


@dataclass(frozen=True)
class Embedding:
    """(L, 2) compressed representation of per-location keyword interactions."""

    coordinates: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coordinates, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError("embedding must be (L, 2)")
        if not np.all(np.isfinite(c)):
            raise ValueError("embedding contains non-finite coordinates")
        c.setflags(write=False)
        object.__setattr__(self, "coordinates", c)

    @property
    def n_locations(self) -> int:
        return self.coordinates.shape[0]


def location_features(params: ReactionParams) -> np.ndarray:
    """(L, 2K + K^2) feature matrix [a | b | flattened interactions]."""
    l = params.n_locations
    return np.hstack([params.a, params.b, params.c.reshape(l, -1)])


def embed(params: ReactionParams) -> Embedding:
    """Project per-location reaction features onto their top 2 principal axes.

    Features are z-scored first (zero-variance features dropped); each
    principal axis is oriented so its largest-magnitude loading is positive.
    Fewer than two informative directions pad with zero coordinates.
    """
    if params.n_locations < 2:
        raise ValueError("need at least 2 locations to embed")
    feats = location_features(params)
    mean = feats.mean(axis=0)
    std = feats.std(axis=0)
    keep = std > 0.0
    coords = np.zeros((feats.shape[0], 2))
    if not keep.any():
        return Embedding(coords)
    z = (feats[:, keep] - mean[keep]) / std[keep]
    _, singular, vt = np.linalg.svd(z, full_matrices=False)
    n_comp = min(2, int(np.count_nonzero(singular > 1e-12 * singular[0])) if singular.size else 0)
    for i in range(n_comp):
        axis = vt[i]
        pivot = np.argmax(np.abs(axis))
        if axis[pivot] < 0:
            axis = -axis
        coords[:, i] = z @ axis
    return Embedding(coords)


def _kmeans_once(x: np.ndarray, k: int, rng: np.random.Generator):
    """One k-means run from a k-means++ start; None on an empty cluster."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    first = rng.integers(n)
    centers[0] = x[first]
    for j in range(1, k):
        dist_sq = np.min(((x[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2), axis=1)
        total = dist_sq.sum()
        if total <= 0.0:
            centers[j] = x[rng.integers(n)]
        else:
            centers[j] = x[rng.choice(n, p=dist_sq / total)]

    labels = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        dist = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = dist.argmin(axis=1)
        if np.any(np.bincount(new_labels, minlength=k) == 0):
            return None
        for j in range(k):
            centers[j] = x[new_labels == j].mean(axis=0)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    inertia = float(((x - centers[labels]) ** 2).sum())
    return labels, inertia


def _canonicalize(labels: np.ndarray, k: int) -> np.ndarray:
    """Relabel groups by the lowest member location index of each cluster."""
    first_member = [int(np.flatnonzero(labels == g)[0]) for g in range(k)]
    order = np.argsort(first_member)
    remap = np.empty(k, dtype=np.int64)
    remap[order] = np.arange(k)
    return remap[labels]


def cluster(embedding: Embedding, d_l: int, seed: int = 0) -> GroupAssignment:
    """Partition locations into ``d_l`` groups with restarted k-means.

    Restarts use seeds derived from ``seed``; the assignment with the lowest
    within-cluster sum of squares wins and is canonically relabeled so the
    result does not depend on internal cluster numbering. A restart that
    collapses to an empty cluster is re-initialized.
    """
    l = embedding.n_locations
    if not 1 <= d_l <= l:
        raise ValueError(f"d_l={d_l} must lie in [1, L={l}]")
    if d_l == 1:
        return GroupAssignment.single_group(l)
    if d_l == l:
        return GroupAssignment(np.arange(l, dtype=np.int64), d_l)

    x = embedding.coordinates
    best_labels, best_inertia = None, np.inf
    for restart in range(KMEANS_RESTARTS):
        for attempt in range(8):
            rng = np.random.default_rng([seed, d_l, restart, attempt])
            result = _kmeans_once(x, d_l, rng)
            if result is not None:
                break
        if result is None:
            continue
        labels, inertia = result
        if inertia < best_inertia - 1e-12:
            best_labels, best_inertia = labels, inertia
    if best_labels is None:
        # duplicated points defeated every restart; fall back to a
        # deterministic split that still uses every label
        best_labels = np.arange(l, dtype=np.int64) % d_l
    return GroupAssignment(_canonicalize(best_labels, d_l), d_l)
