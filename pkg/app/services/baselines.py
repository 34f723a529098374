"""
Baseline pick policies: random selection and k-means clustering.
"""

import logging
from typing import List

import numpy as np

from app.core.exceptions import UsageError
from app.core.numerics import make_rng

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100


def random_pick(n: int, rng: np.random.Generator) -> List[int]:
    """Keep each frame with probability 0.5; frame 0 always kept."""
    if n < 1:
        raise UsageError("random_pick needs at least one frame")
    keep = rng.random(n) < 0.5
    keep[0] = True
    return [int(i) for i in np.flatnonzero(keep)]


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    dist = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = dist.sum()
        if total <= 0.0:
            # every point already sits on a centre: take the lowest unused index
            nxt = next(i for i in range(n) if i not in chosen)
        else:
            nxt = int(np.searchsorted(np.cumsum(dist), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        dist = np.minimum(dist, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[chosen].copy()


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER):
    """Lloyd iterations from a k-means++ start; returns (centroids, assignment)."""
    rng = make_rng(seed, 0x6B6D)
    centroids = _kmeans_pp_init(x, k, rng)
    assign = None
    for _ in range(max_iter):
        d2 = np.sum((x[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = x[assign == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return centroids, assign


def kmeans_pick(features: np.ndarray, k: int, seed: int = 0) -> List[int]:
    """Per centroid the nearest frame (ties to the lowest index), distinct and sorted."""
    x = np.asarray(features, dtype=np.float64)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise UsageError(f"k={k} outside [1, {n}]")
    if k == n:
        return list(range(n))
    centroids, _ = kmeans(x, k, seed)
    picked: List[int] = []
    for c in centroids:
        d2 = np.sum((x - c) ** 2, axis=1)
        d2[picked] = np.inf
        picked.append(int(np.argmin(d2)))
    return sorted(picked)
