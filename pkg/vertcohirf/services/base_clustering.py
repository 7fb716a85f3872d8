"""
Local base clustering methods and the single local step run by each agent.

Every method returns dense labels (relabelled by first occurrence), so the
label alphabet of an agent is always [0, C_a).
"""

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from vertcohirf.core.logging import get_logger
from vertcohirf.schemas import (
    ClusteringStrategy,
    DbscanStrategy,
    KMeansStrategy,
    LocalStepConfig,
    RffKernelKMeansStrategy,
)

logger = get_logger(__name__)

KMEANS_MAX_ITER = 300
KMEANS_TOL = 1e-4

Seed = Union[int, Sequence[int]]


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int


def densify(labels: Iterable[int]) -> np.ndarray:
    """Relabel so that labels are 0, 1, 2, ... in order of first occurrence"""
    mapping: Dict[int, int] = {}
    return np.array(
        [mapping.setdefault(int(v), len(mapping)) for v in labels], dtype=np.int64
    )


def group_codes(codes: Iterable[Sequence[int]]) -> np.ndarray:
    """Dense labels such that two rows share a label iff their codes are equal"""
    mapping: Dict[tuple, int] = {}
    return np.array(
        [mapping.setdefault(tuple(int(c) for c in code), len(mapping)) for code in codes],
        dtype=np.int64,
    )


def make_rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng(int(seed))
    return np.random.default_rng([int(s) for s in seed])


def kmeans_plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding; stops early once every point coincides with a center"""
    n = x.shape[0]
    first = int(rng.integers(n))
    centers = [x[first]]
    d2 = np.sum((x - x[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            break
        target = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
        idx = min(idx, n - 1)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers, dtype=float)


def lloyd(
    x: np.ndarray,
    centers: np.ndarray,
    max_iter: int = KMEANS_MAX_ITER,
    tol: float = KMEANS_TOL,
) -> KMeansResult:
    """Lloyd iterations from the given centers.

    Stops when assignments no longer change, when the squared centroid shift
    drops to tol times the mean feature variance, or after max_iter passes.
    An empty cluster keeps its previous centroid. Labels are not densified.
    """
    centers = np.array(centers, dtype=float, copy=True)
    threshold = tol * float(np.mean(np.var(x, axis=0)))
    labels = None
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        new_labels = cdist(x, centers, "sqeuclidean").argmin(axis=1)
        new_centers = centers.copy()
        for j in range(len(centers)):
            members = new_labels == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        shift = float(np.sum((new_centers - centers) ** 2))
        centers = new_centers
        stable = labels is not None and np.array_equal(new_labels, labels)
        labels = new_labels
        if stable or shift <= threshold:
            break

    d2 = cdist(x, centers, "sqeuclidean")
    labels = d2.argmin(axis=1)
    inertia = float(d2[np.arange(len(x)), labels].sum())
    return KMeansResult(labels=labels, centroids=centers, inertia=inertia, n_iter=n_iter)


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator) -> KMeansResult:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if k > n:
        logger.warning("Clamping k to sample count", k=k, n=n)
        k = n
    result = lloyd(x, kmeans_plusplus_init(x, k, rng))
    result.labels = densify(result.labels)
    return result


def kmeans_fit(x: np.ndarray, k: int, seed: Seed) -> np.ndarray:
    return kmeans(x, k, make_rng(seed)).labels


def dbscan_fit(x: np.ndarray, eps: float, min_samples: int) -> np.ndarray:
    """Euclidean DBSCAN, clusters grown in index order.

    A border point belongs to the first cluster that reaches it; every noise
    point gets a label of its own.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    neighbors = cKDTree(x).query_ball_point(x, r=eps, return_sorted=True)
    core = np.array([len(nb) >= min_samples for nb in neighbors], dtype=bool)

    labels = np.full(n, -1, dtype=np.int64)
    next_label = 0
    for i in range(n):
        if labels[i] != -1 or not core[i]:
            continue
        labels[i] = next_label
        queue = deque([i])
        while queue:
            point = queue.popleft()
            for q in neighbors[point]:
                if labels[q] == -1:
                    labels[q] = next_label
                    if core[q]:
                        queue.append(q)
        next_label += 1

    n_noise = int(np.sum(labels == -1))
    for i in np.flatnonzero(labels == -1):
        labels[i] = next_label
        next_label += 1
    if n_noise:
        logger.debug("DBSCAN noise points kept as singletons", n_noise=n_noise)
    return densify(labels)


def rff_features(
    x: np.ndarray, gamma: float, n_features: int, rng: np.random.Generator
) -> np.ndarray:
    """Random Fourier features z with E[z(x).z(y)] = exp(-gamma ||x - y||^2)"""
    x = np.asarray(x, dtype=float)
    w = rng.normal(scale=math.sqrt(2.0 * gamma), size=(x.shape[1], n_features))
    b = rng.uniform(0.0, 2.0 * math.pi, size=n_features)
    return math.sqrt(2.0 / n_features) * np.cos(x @ w + b)


def rff_kernel_kmeans(
    x: np.ndarray, k: int, gamma: float, n_features: int, seed: Seed
) -> np.ndarray:
    rng = make_rng(seed)
    return kmeans(rff_features(x, gamma, n_features, rng), k, rng).labels


def fit_strategy(
    x: np.ndarray, strategy: ClusteringStrategy, rng: np.random.Generator
) -> np.ndarray:
    """Run one base clustering method on x"""
    if isinstance(strategy, KMeansStrategy):
        return kmeans(x, strategy.k, rng).labels
    if isinstance(strategy, DbscanStrategy):
        return dbscan_fit(x, strategy.eps, strategy.min_samples)
    if isinstance(strategy, RffKernelKMeansStrategy):
        z = rff_features(x, strategy.gamma, strategy.n_features, rng)
        return kmeans(z, strategy.k, rng).labels
    raise TypeError(f"unsupported clustering strategy {type(strategy).__name__}")


def relaxed_group(codes: Sequence[Sequence[int]], h: float) -> np.ndarray:
    """Greedy grouping of repetition codes by component agreement.

    Samples are visited by ascending id; each joins the first group whose
    first member agrees with it on at least ceil(h * R) components.
    """
    codes = np.asarray(codes, dtype=np.int64)
    if codes.ndim != 2:
        raise ValueError("codes must be a list of equal-length tuples")
    n, r = codes.shape
    needed = math.ceil(h * r - 1e-9)
    representatives = np.empty((0, r), dtype=np.int64)
    labels = np.empty(n, dtype=np.int64)
    for i in range(n):
        agreement = np.count_nonzero(representatives == codes[i], axis=1)
        hits = np.flatnonzero(agreement >= needed)
        if hits.size:
            labels[i] = hits[0]
        else:
            labels[i] = len(representatives)
            representatives = np.vstack([representatives, codes[i]])
    return labels


def sampled_feature_count(fraction: float, p: int) -> int:
    """q = max(1, round(fraction * p)) with halves rounded up, at most p"""
    q = max(1, int(math.floor(fraction * p + 0.5)))
    if q > p:
        logger.warning("Clamping sampled feature count", q=q, p=p)
        q = p
    return q


def repetition_rng(seed: Seed, repetition: int) -> np.random.Generator:
    words = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]
    return np.random.default_rng([*words, repetition])


def get_clusters(
    x: np.ndarray, strategy: ClusteringStrategy, cfg: LocalStepConfig, seed: Seed
) -> np.ndarray:
    """One local step: R fits on random feature subsets, then local consensus.

    Repetition r draws from its own stream seeded by (seed..., strategy.seed, r),
    so the result does not depend on how agents are scheduled.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[1] < 1:
        raise ValueError("get_clusters needs a matrix with at least one column")
    n, p = x.shape
    q = sampled_feature_count(cfg.feature_fraction, p)
    words = [int(seed)] if isinstance(seed, (int, np.integer)) else [int(s) for s in seed]

    codes = np.empty((n, cfg.repetitions), dtype=np.int64)
    for r in range(cfg.repetitions):
        rng = repetition_rng([*words, strategy.seed], r)
        columns = np.arange(p) if q == p else np.sort(rng.choice(p, size=q, replace=False))
        codes[:, r] = fit_strategy(x[:, columns], strategy, rng)

    if cfg.repetitions == 1:
        return densify(codes[:, 0])
    if cfg.relaxed:
        return relaxed_group(codes, cfg.relax_threshold)
    return group_codes(codes)
