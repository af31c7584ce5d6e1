"""Hyper-nodes: merging an expansion batch of semantically equivalent
sibling nodes into single frontier entries.

A hyper-node aggregates its constituents' verifier scores with ``max``,
``avg`` or ``min`` (frozen at creation) and rotates expansion over the
constituents in descending-score order, which keeps sampled children
diverse instead of repeatedly conditioning on one surface form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .clustering import ClusterConfig, agglomerative_cluster
from .core import Node

AGGREGATIONS = ("max", "avg", "min")


def aggregate_scores(scores: Sequence[float], f: str) -> float:
    if not scores:
        raise ValueError("cannot aggregate zero scores")
    if f == "max":
        return max(scores)
    if f == "min":
        return min(scores)
    if f == "avg":
        return math.fsum(scores) / len(scores)
    raise ValueError(f"unknown aggregation {f!r}")


@dataclass(frozen=True)
class MergeOptions:
    """Knobs for state merging inside a search run."""

    enabled: bool = False
    f: str = "max"
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    # Embed only the newest step text (siblings share the prefix); flip to
    # embed the full state rendering instead.
    embed_full_state: bool = False
    # Merge new nodes against same-depth unexplored frontier entries too.
    # Applies to the best-first algorithms; beam batches are already
    # depth-synchronous.
    frontier_wide: bool = False

    def __post_init__(self) -> None:
        if self.f not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class HyperNode:
    """A cluster of equivalent sibling nodes treated as one frontier entry."""

    hyper_id: int
    constituents: list[Node]
    aggregation: str
    v_bar: float
    cursor: int = 0

    def __post_init__(self) -> None:
        if not self.constituents:
            raise ValueError("hyper-node needs at least one constituent")
        if not 0 <= self.cursor < len(self.constituents):
            raise ValueError("cursor outside constituent range")

    @property
    def min_node_id(self) -> int:
        return min(n.node_id for n in self.constituents)

    @property
    def constituent_ids(self) -> list[int]:
        return [n.node_id for n in self.constituents]

    def next_constituent(self) -> Node:
        """Round-robin over constituents in descending-score order."""
        node = self.constituents[self.cursor]
        self.cursor = (self.cursor + 1) % len(self.constituents)
        return node


def merge_states(
    nodes: Sequence[Node],
    embeddings: Sequence[np.ndarray],
    cluster_config: ClusterConfig,
    f: str = "max",
    next_hyper_id: int = 0,
) -> list[HyperNode]:
    """Cluster sibling nodes by embedding and wrap each cluster.

    Constituents are ordered by descending score (ties by ascending node
    id); the union of constituents is exactly the input and no node lands
    in two hyper-nodes. Hyper-nodes come back ordered by their smallest
    node id, with ids assigned sequentially from ``next_hyper_id``.
    """
    if len(nodes) != len(embeddings):
        raise ValueError("nodes and embeddings must align")
    if not nodes:
        raise ValueError("at least one node is required")
    order = sorted(range(len(nodes)), key=lambda i: nodes[i].node_id)
    sorted_nodes = [nodes[i] for i in order]
    sorted_embeddings = [embeddings[i] for i in order]
    partition = agglomerative_cluster(sorted_embeddings, cluster_config)
    hypers: list[HyperNode] = []
    for offset, members in enumerate(partition.clusters()):
        cluster_nodes = sorted(
            (sorted_nodes[i] for i in members),
            key=lambda n: (-n.score, n.node_id),
        )
        hypers.append(
            HyperNode(
                hyper_id=next_hyper_id + offset,
                constituents=cluster_nodes,
                aggregation=f,
                v_bar=aggregate_scores([n.score for n in cluster_nodes], f),
            )
        )
    return hypers
