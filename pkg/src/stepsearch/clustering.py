"""Clustering of step embeddings.

The merging mechanism relies on bottom-up agglomerative clustering with a
cosine-distance threshold, which adapts the cluster count to the batch
instead of fixing it up front. A seeded k-means is included as the
baseline alternative, plus the redundancy diagnostic ``N / C``.

Batches here are expansion batches, so N stays small (~10); the
implementations favour exact, deterministic behaviour over asymptotics.
Ties are broken by the smallest member index so that identical inputs
always produce identical partitions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import RngStream
from .errors import DimensionMismatch, InvalidK

LINKAGES = ("average", "complete", "single")


@dataclass(frozen=True)
class ClusterConfig:
    """Agglomerative parameters: cosine-distance threshold and linkage."""

    distance_threshold: float = 0.15
    linkage: str = "average"

    def __post_init__(self) -> None:
        if not 0.0 < self.distance_threshold <= 2.0:
            raise ValueError("distance_threshold must lie in (0, 2]")
        if self.linkage not in LINKAGES:
            raise ValueError(f"linkage must be one of {LINKAGES}")


@dataclass(frozen=True)
class ClusterPartition:
    """Dense assignment of input indices to cluster indices.

    Cluster indices are ordered by each cluster's smallest member index;
    members within a cluster are sorted ascending.
    """

    assignments: dict[int, int]
    n_clusters: int

    def clusters(self) -> list[list[int]]:
        groups: list[list[int]] = [[] for _ in range(self.n_clusters)]
        for idx in sorted(self.assignments):
            groups[self.assignments[idx]].append(idx)
        return groups

    def __post_init__(self) -> None:
        if self.assignments:
            labels = set(self.assignments.values())
            if labels != set(range(self.n_clusters)):
                raise ValueError("cluster labels must be dense in [0, C)")


def _as_matrix(embeddings: Sequence[np.ndarray]) -> np.ndarray:
    if len(embeddings) == 0:
        raise ValueError("at least one embedding is required")
    dims = {int(np.asarray(e).shape[-1]) for e in embeddings}
    shapes_ok = all(np.asarray(e).ndim == 1 for e in embeddings)
    if not shapes_ok or len(dims) != 1:
        raise DimensionMismatch(f"mixed embedding dimensions: {sorted(dims)}")
    return np.asarray([np.asarray(e, dtype=float) for e in embeddings])


def _relabel(groups: list[list[int]]) -> ClusterPartition:
    ordered = sorted((sorted(g) for g in groups if g), key=lambda g: g[0])
    assignments = {idx: c for c, members in enumerate(ordered) for idx in members}
    return ClusterPartition(assignments=assignments, n_clusters=len(ordered))


def cosine_distance_matrix(x: np.ndarray) -> np.ndarray:
    """Pairwise 1 - cosine similarity; inputs are assumed unit-norm."""
    d = 1.0 - x @ x.T
    np.fill_diagonal(d, 0.0)
    return np.clip(d, 0.0, 2.0)


def agglomerative_cluster(
    embeddings: Sequence[np.ndarray], config: ClusterConfig | None = None
) -> ClusterPartition:
    """Bottom-up merge of the closest cluster pair while below the threshold.

    Inter-cluster distance follows ``config.linkage`` over cosine
    distances (Lance-Williams updates). Among equally close pairs the one
    whose smaller member index is lowest wins, then the other cluster's
    smallest index. Merging stops when every remaining pair is at least
    ``distance_threshold`` apart.
    """
    config = config or ClusterConfig()
    x = _as_matrix(embeddings)
    n = x.shape[0]
    if n == 1:
        return ClusterPartition(assignments={0: 0}, n_clusters=1)

    dist = cosine_distance_matrix(x)
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    active = set(range(n))

    while len(active) > 1:
        best: tuple[float, int, int] | None = None
        best_key: tuple[int, int] | None = None
        for a in active:
            for b in active:
                if b <= a:
                    continue
                d_ab = dist[a, b]
                key = (min(members[a][0], members[b][0]), max(members[a][0], members[b][0]))
                if best is None or d_ab < best[0] or (d_ab == best[0] and key < best_key):
                    best = (d_ab, a, b)
                    best_key = key
        assert best is not None
        d_min, a, b = best
        if d_min >= config.distance_threshold:
            break
        na, nb = len(members[a]), len(members[b])
        for k in active:
            if k in (a, b):
                continue
            if config.linkage == "average":
                dist[a, k] = dist[k, a] = (na * dist[a, k] + nb * dist[b, k]) / (na + nb)
            elif config.linkage == "complete":
                dist[a, k] = dist[k, a] = max(dist[a, k], dist[b, k])
            else:
                dist[a, k] = dist[k, a] = min(dist[a, k], dist[b, k])
        members[a] = sorted(members[a] + members[b])
        del members[b]
        active.remove(b)

    return _relabel(list(members.values()))


def kmeans_cluster(
    embeddings: Sequence[np.ndarray],
    k: int,
    rng: RngStream,
    max_iters: int = 100,
) -> ClusterPartition:
    """Lloyd's iteration with k-means++ seeding drawn from ``rng``."""
    x = _as_matrix(embeddings)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise InvalidK(f"k={k} outside [1, {n}]")
    if k == n:
        return _relabel([[i] for i in range(n)])
    if k == 1:
        return _relabel([list(range(n))])

    centers = [x[rng.integers(n)]]
    while len(centers) < k:
        d2 = np.min(
            [np.sum((x - c) ** 2, axis=1) for c in centers], axis=0
        )
        total = float(d2.sum())
        if total <= 0.0:
            # All remaining points coincide with a center; take the lowest
            # index not already chosen.
            chosen = {tuple(c) for c in centers}
            idx = next(i for i in range(n) if tuple(x[i]) not in chosen)
            centers.append(x[idx])
            continue
        centers.append(x[rng.choice_index(d2 / total)])

    center_arr = np.asarray(centers)
    labels: np.ndarray | None = None
    for _iteration in range(max(1, max_iters)):
        d2 = np.sum((x[:, None, :] - center_arr[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                # Re-seed an emptied cluster at the farthest point.
                far = int(np.argmax(np.min(d2, axis=1)))
                new_labels[far] = c
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            pts = x[labels == c]
            if len(pts):
                center_arr[c] = pts.mean(axis=0)
    assert labels is not None

    groups: list[list[int]] = [[] for _ in range(k)]
    for i, c in enumerate(labels):
        groups[int(c)].append(i)
    return _relabel(groups)


def similarity_degree(n_nodes: int, partition: ClusterPartition) -> float:
    """Redundancy diagnostic: batch size over cluster count (N / C)."""
    if n_nodes != len(partition.assignments):
        raise ValueError(
            f"n_nodes={n_nodes} does not match {len(partition.assignments)} assigned ids"
        )
    return n_nodes / partition.n_clusters
