"""K-means baseline and centroid initializer, plus the elbow k selector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .tensor_io import FeatureMatrix

DEFAULT_MAX_ITER = 300
DEFAULT_TOL = 1e-6
DEFAULT_RESTARTS = 10


@dataclass(frozen=True)
class ClusterState:
    """Centroids plus hard assignments. Assignments argmin distance, ties to lowest index."""

    centroids: np.ndarray
    assignments: np.ndarray
    wcss: float
    n_iter: int = 0
    converged: bool = True


@dataclass(frozen=True)
class ElbowResult:
    selected_k: int
    ks: tuple[int, ...]
    wcss: tuple[float, ...]
    no_knee: bool = False


def _as_array(matrix) -> np.ndarray:
    return matrix.data if isinstance(matrix, FeatureMatrix) else np.asarray(matrix, dtype=np.float64)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # (n, k) squared Euclidean distances, clipped to keep fp noise non-negative.
    d = (
        np.sum(x * x, axis=1)[:, None]
        - 2.0 * x @ centroids.T
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d, 0.0)


def _assign(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, float]:
    d = _sq_dists(x, centroids)
    labels = np.argmin(d, axis=1)
    wcss = float(d[np.arange(len(x)), labels].sum())
    return labels, wcss


def kmeanspp_init(matrix, k: int, seed: int | np.random.Generator) -> np.ndarray:
    """k-means++ seeding with standard D^2 weighting, deterministic per seed.

    When every remaining point coincides with a chosen centroid the next one
    is drawn uniformly from the unchosen rows, so k == n always returns a
    permutation of the data."""
    x = _as_array(matrix)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise InvalidInput(f"k={k} outside 1..n={n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    closest = np.sum((x - x[chosen[0]]) ** 2, axis=1)
    taken = {int(chosen[0])}
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            free = np.array([j for j in range(n) if j not in taken])
            idx = int(free[rng.integers(len(free))])
        chosen[i] = idx
        taken.add(idx)
        closest = np.minimum(closest, np.sum((x - x[idx]) ** 2, axis=1))
    return x[chosen].copy()


def _lloyd(x: np.ndarray, centroids: np.ndarray, max_iter: int, tol: float) -> ClusterState:
    centroids = centroids.copy()
    labels, wcss = _assign(x, centroids)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new_centroids = centroids.copy()
        empty = []
        for j in range(len(centroids)):
            members = x[labels == j]
            if len(members):
                new_centroids[j] = members.mean(axis=0)
            else:
                empty.append(j)
        if empty:
            # Reseed each empty cluster at the point farthest from its own
            # centroid; mask already-taken points so repairs stay distinct.
            dists = np.sum((x - new_centroids[labels]) ** 2, axis=1)
            for j in empty:
                idx = int(np.argmax(dists))
                new_centroids[j] = x[idx]
                dists[idx] = -1.0
        new_labels, new_wcss = _assign(x, new_centroids)
        assert new_wcss <= wcss + 1e-9 * max(1.0, wcss), "Lloyd step increased wcss"
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids, labels, wcss = new_centroids, new_labels, new_wcss
        if shift < tol:
            converged = True
            break
    return ClusterState(centroids, labels, wcss, n_iter=it, converged=converged)


def kmeans_fit(
    matrix,
    k: int,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    restarts: int = DEFAULT_RESTARTS,
) -> ClusterState:
    """Lloyd iterations from k-means++ starts; the lowest-wcss restart wins."""
    x = _as_array(matrix)
    if max_iter < 1:
        raise InvalidInput("max_iter must be >= 1")
    if tol < 0:
        raise InvalidInput("tol must be >= 0")
    if restarts < 1:
        raise InvalidInput("restarts must be >= 1")
    best = None
    for child_seed in np.random.SeedSequence(seed).spawn(restarts):
        rng = np.random.default_rng(child_seed)
        state = _lloyd(x, kmeanspp_init(x, k, rng), max_iter, tol)
        if best is None or state.wcss < best.wcss:
            best = state
    return best


def elbow_select(
    matrix,
    k_min: int,
    k_max: int,
    seed: int = 0,
    restarts: int = 5,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ElbowResult:
    """Pick k at the knee of the wcss curve.

    The knee is the k with maximum perpendicular distance to the line
    joining the curve endpoints after normalizing both axes to [0, 1].
    A flat or exactly linear curve has no knee; k_min is returned flagged.
    """
    x = _as_array(matrix)
    n = x.shape[0]
    if not 1 <= k_min < k_max <= n:
        raise InvalidInput(f"need 1 <= k_min < k_max <= n, got {k_min}..{k_max} for n={n}")
    ks = list(range(k_min, k_max + 1))
    wcss = [kmeans_fit(x, k, seed=seed, max_iter=max_iter, tol=tol, restarts=restarts).wcss for k in ks]

    span = max(wcss) - min(wcss)
    if span <= 0:
        return ElbowResult(k_min, tuple(ks), tuple(wcss), no_knee=True)
    xs = (np.array(ks, dtype=np.float64) - k_min) / (k_max - k_min)
    ys = (np.array(wcss) - min(wcss)) / span
    # Distance from (x, y) to the segment (0, ys[0]) -> (1, ys[-1]).
    x0, y0, x1, y1 = 0.0, ys[0], 1.0, ys[-1]
    norm = np.hypot(x1 - x0, y1 - y0)
    dists = np.abs((y1 - y0) * xs - (x1 - x0) * ys + x1 * y0 - y1 * x0) / norm
    best = int(np.argmax(dists))
    if dists[best] < 1e-9:
        return ElbowResult(k_min, tuple(ks), tuple(wcss), no_knee=True)
    return ElbowResult(ks[best], tuple(ks), tuple(wcss), no_knee=False)
