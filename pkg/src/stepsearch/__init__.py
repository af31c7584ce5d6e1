"""Verifier-guided tree search for multi-step reasoning.

The engine couples pluggable policy/verifier/embedder backends with four
search algorithms and two efficiency mechanisms: merging semantically
equivalent sibling states into hyper-nodes, and reducing verifier score
variance via lambda-return training targets and inference-time verifier
ensembles.
"""

from .core import (
    DEFAULT_ANSWER_MARKER,
    Node,
    Problem,
    ReasoningState,
    RngStream,
    Step,
    TokenMeter,
    detect_terminal,
    extract_answer,
    load_problems,
    normalize_answer,
)
from .clustering import ClusterConfig, ClusterPartition, agglomerative_cluster, kmeans_cluster, similarity_degree
from .merging import HyperNode, MergeOptions, merge_states
from .search import (
    SearchBackends,
    SearchConfig,
    SearchResult,
    aggregate_answers,
    beam_search,
    bfs_search,
    dynamic_expansion_budget,
    greedy_decode,
    mcts_search,
    sample_solutions,
    tree_search,
)
from .valuation import (
    EnsembleConfig,
    EnsembleVerifier,
    TrajectoryRecord,
    ValueLabel,
    brier_by_step,
    ensemble_score,
    export_value_labels,
    lambda_return,
    mc_return,
    score_std_by_difficulty,
)

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_ANSWER_MARKER",
    "ClusterConfig",
    "ClusterPartition",
    "EnsembleConfig",
    "EnsembleVerifier",
    "HyperNode",
    "MergeOptions",
    "Node",
    "Problem",
    "ReasoningState",
    "RngStream",
    "SearchBackends",
    "SearchConfig",
    "SearchResult",
    "Step",
    "TokenMeter",
    "TrajectoryRecord",
    "ValueLabel",
    "agglomerative_cluster",
    "aggregate_answers",
    "beam_search",
    "bfs_search",
    "brier_by_step",
    "detect_terminal",
    "dynamic_expansion_budget",
    "ensemble_score",
    "export_value_labels",
    "extract_answer",
    "greedy_decode",
    "kmeans_cluster",
    "lambda_return",
    "load_problems",
    "mc_return",
    "mcts_search",
    "merge_states",
    "normalize_answer",
    "sample_solutions",
    "score_std_by_difficulty",
    "similarity_degree",
    "tree_search",
]
