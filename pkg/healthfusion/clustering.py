"""Clustering of subjects by their merged representation."""
import logging
from dataclasses import dataclass, field
from typing import Optional
import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

from healthfusion.errors import ConfigError, DataFormatError, EmptyInputError

logger = logging.getLogger(__name__)

KMEANS_MAX_ITER = 300
NOISE = -1


@dataclass(frozen=True)
class ClusteringResult:
    """Cluster assignments of the input rows.

    Args:
        algorithm (str): kmeans or dbscan.
        assignments (np.ndarray): cluster per row, -1 for DBSCAN noise.
        centroids (np.ndarray): k x D centres for k-means, None for DBSCAN.
        parameters (dict): the settings used.
        sse_trace (tuple): within-cluster sum of squares per Lloyd step.
    """

    algorithm: str
    assignments: np.ndarray
    centroids: Optional[np.ndarray]
    parameters: dict
    sse_trace: tuple = field(default=())

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignments.tolist()) - {NOISE})


def _points(X) -> np.ndarray:
    values = np.asarray(X, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.size == 0 or len(values) == 0:
        raise EmptyInputError("nothing to cluster")
    if not np.all(np.isfinite(values)):
        raise DataFormatError("cluster input holds non-finite values")
    return values


def _plus_plus(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: each new centre drawn with probability proportional to D²."""
    chosen = [int(rng.integers(len(points)))]
    nearest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = nearest.sum()
        if total > 0:
            pick = int(rng.choice(len(points), p=nearest / total))
        else:
            pick = int(np.setdiff1d(np.arange(len(points)), chosen)[0])
        chosen.append(pick)
        nearest = np.minimum(nearest, np.sum((points - points[pick]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(X, k: int, seed: int = 0, max_iter: int = KMEANS_MAX_ITER) -> ClusteringResult:
    """Lloyd's k-means with seeded k-means++ initialization.

    Rows are processed in lexicographic order, so the partition does not
    depend on the input row order. Iterations stop at an assignment fixpoint
    or after ``max_iter`` steps; a cluster that empties keeps its centre.

    Args:
        X: N x D points.
        k (int): number of clusters, 1 <= k <= N.
        seed (int): seed of the initialization.

    Raises:
        ConfigError: k outside [1, N].
        EmptyInputError: no points.

    Examples:
        >>> blobs = np.r_[np.zeros((5, 2)) + [[0.1 * i, 0] for i in range(5)],
        ...               np.full((5, 2), 10.0) + [[0, 0.1 * i] for i in range(5)]]
        >>> result = kmeans(blobs, 2, seed=3)
        >>> len(set(result.assignments[:5])), len(set(result.assignments[5:])), result.n_clusters
        (1, 1, 2)
        >>> bool(np.allclose(kmeans(blobs, 1).centroids, blobs.mean(axis=0)))
        True
        >>> kmeans(blobs, 10).sse_trace[-1]
        0.0
        >>> all(a >= b for a, b in zip(result.sse_trace, result.sse_trace[1:]))
        True
        >>> kmeans(blobs, 11)
        Traceback (most recent call last):
        healthfusion.errors.ConfigError: k must lie in [1, 10], got 11
    """
    points = _points(X)
    if not 1 <= k <= len(points):
        raise ConfigError(f"k must lie in [1, {len(points)}], got {k}")
    order = np.lexsort(points.T[::-1])
    ordered = points[order]
    rng = np.random.default_rng(seed)
    centroids = _plus_plus(ordered, k, rng)
    labels = np.full(len(ordered), -1)
    trace = []
    for iteration in range(max_iter):
        distances = cdist(ordered, centroids, "sqeuclidean")
        updated = np.argmin(distances, axis=1)
        if iteration and np.array_equal(updated, labels):
            break
        labels = updated
        for cluster in range(k):
            members = ordered[labels == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
        trace.append(float(np.sum((ordered - centroids[labels]) ** 2)))
    else:
        logger.warning("k-means stopped after %d iterations without a fixpoint", max_iter)
    assignments = np.empty(len(points), dtype=int)
    assignments[order] = labels
    logger.debug("k-means: k=%d, %d iterations, sse %.6g", k, len(trace), trace[-1])
    return ClusteringResult("kmeans", assignments, centroids, {"k": k, "seed": seed}, tuple(trace))


def dbscan(X, eps: float, min_pts: int) -> ClusteringResult:
    """Density-based clustering; points in no dense region are noise (-1).

    Core points have at least ``min_pts`` neighbours within ``eps``, the
    point itself included. Core points within ``eps`` of each other share a
    cluster; a border point joins the cluster of its nearest core point.
    Clusters are numbered by their first row.

    Raises:
        ConfigError: eps <= 0 or min_pts < 1.
        EmptyInputError: no points.

    Examples:
        >>> dbscan([[0, 0], [0, 0.1], [5, 5]], eps=0.5, min_pts=2).assignments.tolist()
        [0, 0, -1]
        >>> dbscan([[0, 0], [0, 0.1], [0.1, 0]], eps=0.5, min_pts=3).assignments.tolist()
        [0, 0, 0]
        >>> dbscan([[0, 0], [0, 0.1]], eps=0.5, min_pts=3).assignments.tolist()
        [-1, -1]
        >>> dbscan(np.zeros((0, 2)), eps=0.5, min_pts=2)
        Traceback (most recent call last):
        healthfusion.errors.EmptyInputError: nothing to cluster
    """
    if eps <= 0 or min_pts < 1:
        raise ConfigError(f"dbscan needs eps > 0 and min_pts >= 1, got {eps} and {min_pts}")
    points = _points(X)
    distances = cdist(points, points)
    close = distances <= eps
    core = close.sum(axis=1) >= min_pts
    assignments = np.full(len(points), NOISE)
    core_index = np.flatnonzero(core)
    if len(core_index):
        graph = csr_matrix(close[np.ix_(core_index, core_index)])
        _, components = connected_components(graph, directed=False)
        # number clusters by the first core row they contain
        _, first = np.unique(components, return_index=True)
        renumber = np.empty(len(first), dtype=int)
        renumber[np.argsort(first, kind="stable")] = np.arange(len(first))
        assignments[core_index] = renumber[components]
        border = np.flatnonzero(~core & close[:, core].any(axis=1))
        if len(border):
            nearest = core_index[np.argmin(distances[np.ix_(border, core_index)], axis=1)]
            assignments[border] = assignments[nearest]
    logger.debug(
        "dbscan: %d clusters, %d noise points", len(set(assignments.tolist()) - {NOISE}), int(np.sum(assignments == NOISE))
    )
    return ClusteringResult("dbscan", assignments, None, {"eps": eps, "min_pts": min_pts})
