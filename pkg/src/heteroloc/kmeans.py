"""Seeded k-means with k-means++ initialisation."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .scene import ValidationError

# tiny inputs are solved exactly when k^(n-1) labelings fit this budget (n <= 8 at k = 3)
EXACT_LABELINGS = 2187


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    history: list  # inertia after each assignment step of the kept run
    iterations: int


def _sq_dists(points, centroids):
    d = points[:, None, :] - centroids[None, :, :]
    return (d * d).sum(axis=-1)


def _plus_plus(points, k, rng):
    n = len(points)
    centroids = [points[rng.integers(n)]]
    closest = _sq_dists(points, np.array(centroids))[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a chosen centroid
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centroids.append(points[idx])
        closest = np.minimum(closest, _sq_dists(points, points[idx][None])[:, 0])
    return np.array(centroids, dtype=float)


def _lloyd(points, centroids, max_iters):
    history = []
    labels = None
    it = 0
    for it in range(1, max_iters + 1):
        d = _sq_dists(points, centroids)
        new_labels = d.argmin(axis=1)
        history.append(float(d[np.arange(len(points)), new_labels].sum()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels.copy()
        own = d[np.arange(len(points)), labels]
        for c in range(len(centroids)):
            members = points[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
            else:
                far = int(own.argmax())
                centroids[c] = points[far]
                labels[far] = c
                own[far] = -1.0
    d = _sq_dists(points, centroids)
    labels = d.argmin(axis=1)
    inertia = float(d[np.arange(len(points)), labels].sum())
    return centroids, labels, inertia, history, it


def _hartigan(points, labels, k, history):
    """Single-point moves that strictly lower the inertia, until none is left.

    A Hartigan optimum is also a Lloyd fixpoint, and escapes many of Lloyd's
    poor local optima.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(float)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    moved = True
    while moved:
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if counts[a] <= 1:
                continue
            cents = sums / np.maximum(counts, 1.0)[:, None]
            d = ((cents - x) ** 2).sum(axis=1)
            gain = counts / (counts + 1.0) * d
            gain[a] = np.inf
            b = int(np.argmin(gain))
            if gain[b] < counts[a] / (counts[a] - 1.0) * d[a] * (1.0 - 1e-12):
                labels[i] = b
                counts[a] -= 1
                counts[b] += 1
                sums[a] -= x
                sums[b] += x
                moved = True
        if moved:
            history.append(_inertia(points, labels, k))
    return labels


def _best_swap(points, labels, k, block: int = 256):
    """Cheapest exchange of two points between different clusters, as ``(delta, i, j)``.

    With cluster sums S and sizes n, the inertia is const - sum |S|^2 / n, so
    swapping x_i (cluster a) and x_j (cluster b) changes it by
    -(2 S_a.d + |d|^2) / n_a - (-2 S_b.d + |d|^2) / n_b with d = x_j - x_i.
    """
    counts = np.bincount(labels, minlength=k).astype(float)
    sums = np.zeros((k, points.shape[1]))
    np.add.at(sums, labels, points)
    best = (0.0, -1, -1)
    norms = (points * points).sum(axis=1)
    sb_dot_x = (sums[labels] * points).sum(axis=1)  # S_b(j) . x_j
    inv_n = 1.0 / counts[labels]
    for start in range(0, len(points), block):
        rows = slice(start, start + block)
        xi, sa = points[rows], sums[labels[rows]]
        sq = norms[rows][:, None] + norms[None, :] - 2.0 * xi @ points.T
        sa_d = sa @ points.T - (sa * xi).sum(axis=1)[:, None]  # S_a . (x_j - x_i)
        sb_d = sb_dot_x[None, :] - (xi @ sums.T)[:, labels]  # S_b . (x_j - x_i)
        delta = -(2.0 * sa_d + sq) * inv_n[rows][:, None] - (-2.0 * sb_d + sq) * inv_n[None, :]
        delta[labels[rows][:, None] == labels[None, :]] = np.inf
        flat = int(np.argmin(delta))
        i, j = divmod(flat, delta.shape[1])
        if delta[i, j] < best[0]:
            best = (float(delta[i, j]), start + i, j)
    return best


def _exchange(points, labels, k, history, max_swaps: int = 100):
    """Hartigan moves, then the best improving pair exchange, until neither helps."""
    labels = _hartigan(points, labels, k, history)
    for _ in range(max_swaps):
        current = _inertia(points, labels, k)
        delta, i, j = _best_swap(points, labels, k)
        if i < 0 or delta >= -1e-12 * max(current, 1e-300):
            break
        labels[i], labels[j] = labels[j], labels[i]
        history.append(_inertia(points, labels, k))
        labels = _hartigan(points, labels, k, history)
    return labels


def _inertia(points, labels, k):
    total = 0.0
    for c in range(k):
        members = points[labels == c]
        if len(members):
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def _refine(points, k, centroids, labels, history):
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k)
    for c in np.flatnonzero(counts == 0):
        own = ((points - centroids[labels]) ** 2).sum(axis=1)
        own[counts[labels] <= 1] = -1.0
        far = int(own.argmax())
        counts[labels[far]] -= 1
        labels[far] = c
        counts[c] += 1
    labels = _hartigan(points, labels, k, history)
    centroids = np.array([points[labels == c].mean(axis=0) for c in range(k)])
    return centroids, labels, _inertia(points, labels, k)


def _exact(points, k):
    """Optimal partition by enumerating labelings whose first point is in cluster 0."""
    n = len(points)
    tails = np.array(list(itertools.product(range(k), repeat=n - 1)), dtype=np.int64).reshape(-1, n - 1)
    labels = np.column_stack([np.zeros(len(tails), dtype=np.int64), tails])
    onehot = labels[:, :, None] == np.arange(k)[None, None, :]  # (M, n, k)
    counts = onehot.sum(axis=1)
    full = (counts > 0).all(axis=1)
    labels, onehot, counts = labels[full], onehot[full], counts[full]
    sums = np.einsum("mnk,nd->mkd", onehot, points)
    inertia = float((points * points).sum()) - ((sums * sums).sum(axis=-1) / counts).sum(axis=1)
    best = labels[int(np.argmin(inertia))]
    return best, _inertia(points, best, k)


def kmeans_fit(points, k: int, seed: int = 0, max_iters: int = 100, n_init: int = 10) -> KMeansResult:
    """Lloyd iterations from ``n_init`` k-means++ starts; the lowest-inertia run wins.

    Inputs small enough to enumerate (see ``EXACT_LABELINGS``) are solved exactly instead.

    Empty clusters are re-seeded at the point farthest from its centroid.
    Each run ends with Hartigan single-point moves; the winner then also gets
    pair exchanges, which escape optima that no single move can leave.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValidationError(f"points must be N x d, got shape {points.shape}")
    if k < 1:
        raise ValidationError("k must be >= 1")
    if len(points) < k:
        raise ValidationError(f"need at least k={k} points, got {len(points)}")
    if len(points) > k and k ** (len(points) - 1) <= EXACT_LABELINGS:
        labels, inertia = _exact(points, k)
        centroids = np.array([points[labels == c].mean(axis=0) for c in range(k)])
        return KMeansResult(centroids, labels, inertia, [inertia], 0)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _plus_plus(points, k, rng)
        centroids, labels, _, history, iters = _lloyd(points, init, max_iters)
        centroids, labels, inertia = _refine(points, k, centroids, labels, history)
        result = KMeansResult(centroids, labels, inertia, history, iters)
        if best is None or result.inertia < best.inertia:
            best = result
    labels = _exchange(points, best.labels, k, best.history)
    if not np.array_equal(labels, best.labels):
        best.labels = labels
        best.centroids = np.array([points[labels == c].mean(axis=0) for c in range(k)])
        best.inertia = _inertia(points, labels, k)
    return best


def kmeans(points, k: int, seed: int = 0, max_iters: int = 100, n_init: int = 10) -> np.ndarray:
    """Return the k centroids (k x d)."""
    return kmeans_fit(points, k, seed, max_iters, n_init).centroids
