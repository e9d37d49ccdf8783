"""k-means++ pseudo-labelling, cross-round label alignment and purity."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .numerics import as_matrix, l2_normalize_rows


class ClusterCountMismatch(ValueError):
    """Raised by ``align_labels`` when the two rounds use different K."""


@dataclass(frozen=True)
class PseudoLabelSet:
    labels: np.ndarray
    k: int
    round: int
    centroids: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.size == 0:
            raise ValueError("labels must be a non-empty 1-D sequence")
        if labels.min() < 0 or labels.max() >= self.k:
            raise ValueError(f"labels must lie in [0, {self.k})")
        if self.round < 0:
            raise ValueError("round must be non-negative")
        object.__setattr__(self, "labels", labels)


def squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centroids[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeanspp_seed(points, k: int, rng: np.random.Generator) -> np.ndarray:
    points = as_matrix(points, "points")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= K <= N, got K={k}, N={n}")
    chosen = [int(rng.integers(n))]
    nearest = squared_distances(points, points[chosen[0]][None])[:, 0]
    for _ in range(1, k):
        total = nearest.sum()
        if total <= 0:
            # all remaining points coincide with a centre; pick any unused index
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(unused[rng.integers(unused.size)])
        else:
            idx = int(rng.choice(n, p=nearest / total))
        chosen.append(idx)
        nearest = np.minimum(nearest, squared_distances(points, points[idx][None])[:, 0])
    return points[chosen].copy()


def lloyd_iterate(points, centroids, max_iter: int = 300, tol: float = 1e-6):
    """Lloyd refinement. Returns ``(centroids, labels, objective_trace)``.

    The trace holds the sum of squared distances after each assignment step.
    Ties go to the lowest centroid index; an emptied cluster takes the point
    farthest from its current centroid.
    """
    points = as_matrix(points, "points")
    centroids = as_matrix(centroids, "centroids").copy()
    k = centroids.shape[0]
    if k > points.shape[0]:
        raise ValueError(f"need K <= N, got K={k}, N={points.shape[0]}")
    trace: list[float] = []
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for _ in range(max_iter):
        d2 = squared_distances(points, centroids)
        labels = np.argmin(d2, axis=1)
        objective = float(d2[np.arange(points.shape[0]), labels].sum())
        trace.append(objective)
        if len(trace) > 1:
            prev = trace[-2]
            if prev == 0 or (prev - objective) / prev < tol:
                break
        elif objective == 0:
            break
        centroids = _update_centroids(points, labels, d2, k)
    return centroids, labels, trace


def _update_centroids(points: np.ndarray, labels: np.ndarray, d2: np.ndarray, k: int) -> np.ndarray:
    labels = labels.copy()
    own = d2[np.arange(points.shape[0]), labels].copy()
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        # donor must leave a non-empty cluster behind
        movable = counts[labels] > 1
        far = int(np.argmax(np.where(movable, own, -1.0)))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        own[far] = 0.0
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    return sums / counts[:, None]


def assign_pseudo_labels(
    embeddings, k: int, rng: np.random.Generator, round_index: int = 0, max_iter: int = 300, tol: float = 1e-6
) -> PseudoLabelSet:
    points = l2_normalize_rows(as_matrix(embeddings, "embeddings"))
    seeds = kmeanspp_seed(points, k, rng)
    centroids, labels, _ = lloyd_iterate(points, seeds, max_iter=max_iter, tol=tol)
    labels = _repair_empty(points, centroids, labels, k)
    return PseudoLabelSet(labels, k, round_index, centroids)


def _repair_empty(points, centroids, labels, k):
    # Lloyd's final assignment can still leave a cluster empty; hand it the farthest point.
    counts = np.bincount(labels, minlength=k)
    if counts.min() > 0:
        return labels
    labels = labels.copy()
    own = squared_distances(points, centroids)[np.arange(points.shape[0]), labels]
    for j in np.flatnonzero(counts == 0):
        movable = counts[labels] > 1
        far = int(np.argmax(np.where(movable, own, -1.0)))
        counts[labels[far]] -= 1
        labels[far] = j
        counts[j] = 1
        own[far] = 0.0
    return labels


def contingency(a, b, k: int) -> np.ndarray:
    table = np.zeros((k, k), dtype=np.int64)
    np.add.at(table, (np.asarray(a), np.asarray(b)), 1)
    return table


def matching_permutation(prev_labels, new_labels, k: int) -> np.ndarray:
    """``perm[new_id] = prev_id`` maximizing agreement between the two labelings.

    Counts are scaled by K+1 and the diagonal gets +1, so among optimal
    matchings the one keeping the most ids unchanged wins.
    """
    table = contingency(new_labels, prev_labels, k).astype(np.float64)
    score = table * (k + 1) + np.eye(k)
    rows, cols = linear_sum_assignment(score, maximize=True)
    perm = np.empty(k, dtype=np.int64)
    perm[rows] = cols
    return perm


def align_labels(prev: PseudoLabelSet, new: PseudoLabelSet) -> PseudoLabelSet:
    if prev.k != new.k:
        raise ClusterCountMismatch(f"cluster count changed from {prev.k} to {new.k}")
    if prev.labels.shape != new.labels.shape:
        raise ValueError("label sets cover different sample counts")
    perm = matching_permutation(prev.labels, new.labels, new.k)
    centroids = np.empty_like(new.centroids)
    centroids[perm] = new.centroids
    return replace(new, labels=perm[new.labels], centroids=centroids)


def purity(labels, truth) -> float:
    """Fraction of samples that belong to their cluster's majority class."""
    pred = labels.labels if isinstance(labels, PseudoLabelSet) else np.asarray(labels, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("labels and truth have different lengths")
    if pred.size == 0:
        raise ValueError("purity of an empty labelling is undefined")
    table = np.zeros((pred.max() + 1, truth.max() + 1), dtype=np.int64)
    np.add.at(table, (pred, truth), 1)
    return float(table.max(axis=1).sum() / pred.size)
