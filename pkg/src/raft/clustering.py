"""Agglomerative grouping of feature columns under the group distance."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import FeatureSet, default_bins
from .info_metrics import MICache, PairwiseDistanceKind, pairwise_distance


@dataclass(frozen=True)
class ClusterSet:
    """Disjoint, covering partition of column indices; groups sorted by their
    smallest member, members sorted ascending."""

    groups: tuple[tuple[int, ...], ...]
    generation: int = 0

    def __post_init__(self) -> None:
        flat = [i for g in self.groups for i in g]
        n = len(flat)
        if n == 0 or sorted(flat) != list(range(n)):
            raise ValueError(f"groups do not partition 0..{n - 1}: {self.groups}")
        for g in self.groups:
            if list(g) != sorted(g):
                raise ValueError(f"group members must be sorted ascending: {g}")

    def __len__(self) -> int:
        return len(self.groups)


def pair_score_matrix(
    fs: FeatureSet,
    kind: PairwiseDistanceKind,
    bins: int | None = None,
    cache: MICache | None = None,
) -> np.ndarray:
    """N x N matrix of d(f_i, f_j) * |MI(f_i,y) - MI(f_j,y)| (zero diagonal)."""
    bins = default_bins(fs.n_rows) if bins is None else bins
    cache = MICache() if cache is None else cache
    n = fs.n_cols
    y = np.asarray(fs.target.values, dtype=np.float64)
    mi_y = [cache.mi(fs.column(i), y, bins) for i in range(n)]
    scores = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            s = pairwise_distance(fs.column(i), fs.column(j), kind) * abs(mi_y[i] - mi_y[j])
            scores[i, j] = s
            scores[j, i] = s
    return scores


def mean_pairwise_score(scores: np.ndarray) -> float:
    """Mean of the upper triangle; 0.0 for a single column."""
    n = scores.shape[0]
    if n < 2:
        return 0.0
    return float(np.mean(scores[np.triu_indices(n, k=1)]))


def fg_cluster(
    fs: FeatureSet,
    kind: PairwiseDistanceKind,
    threshold: float,
    bins: int | None = None,
    cache: MICache | None = None,
    generation: int = 0,
) -> ClusterSet:
    """Start from singletons and merge the closest pair while its distance is
    strictly below the threshold.

    Cluster distances are re-averaged from raw member pairs after every merge;
    ties pick the lexicographically smallest (first, second) cluster position.
    """
    if threshold <= 0.0:
        raise ValueError(f"threshold must be positive, got {threshold}")
    scores = pair_score_matrix(fs, kind, bins, cache)
    return _merge_loop(scores, threshold, generation)


def _merge_loop(scores: np.ndarray, threshold: float, generation: int) -> ClusterSet:
    clusters: list[tuple[int, ...]] = [(i,) for i in range(scores.shape[0])]
    while len(clusters) > 1:
        best_dist = None
        best_pair = None
        for a in range(len(clusters)):
            for b in range(a + 1, len(clusters)):
                d = float(np.mean(scores[np.ix_(clusters[a], clusters[b])]))
                if best_dist is None or d < best_dist:
                    best_dist = d
                    best_pair = (a, b)
        if best_dist is None or not best_dist < threshold:
            break
        a, b = best_pair
        merged = tuple(sorted(clusters[a] + clusters[b]))
        clusters = [c for k, c in enumerate(clusters) if k not in (a, b)]
        clusters.append(merged)
        clusters.sort(key=lambda c: c[0])
    return ClusterSet(tuple(clusters), generation)


def adaptive_cluster(
    fs: FeatureSet,
    kind: PairwiseDistanceKind,
    delta: float,
    bins: int | None = None,
    cache: MICache | None = None,
    generation: int = 0,
    min_clusters: int = 2,
) -> ClusterSet:
    """Cluster with threshold = delta * mean initial pairwise score, halving the
    threshold until at least ``min_clusters`` groups come out.

    Falls back to singletons when halving cannot help (all scores identical),
    and to the single trivial group when there is only one column.
    """
    n = fs.n_cols
    if n == 1:
        return ClusterSet(((0,),), generation)
    scores = pair_score_matrix(fs, kind, bins, cache)
    threshold = delta * mean_pairwise_score(scores)
    for _ in range(12):
        if threshold <= 0.0:
            break
        result = _merge_loop(scores, threshold, generation)
        if len(result) >= min_clusters:
            return result
        threshold /= 2.0
    return ClusterSet(tuple((i,) for i in range(n)), generation)


def cluster_columns(fs: FeatureSet, cluster: tuple[int, ...] | list[int]) -> FeatureSet:
    """Restrict a feature set to one cluster's columns (same target, shared metas)."""
    if len(cluster) == 0:
        raise ValueError("cluster must be nonempty")
    idx = list(cluster)
    if idx != sorted(idx):
        raise ValueError(f"cluster indices must be sorted ascending: {cluster}")
    if idx[0] < 0 or idx[-1] >= fs.n_cols:
        raise IndexError(f"cluster index out of range for {fs.n_cols} columns: {cluster}")
    return fs.with_columns(fs.values[:, idx], tuple(fs.columns[i] for i in idx))
