"""Persisted record of one search run.

A trace captures everything needed to replay or audit a run: node
records, hyper-node groupings, the per-iteration selection log, rollout
records (simulation and baseline rollouts), and the final result.
Serialization is canonical (sorted keys, fixed separators) so that
identical runs produce byte-identical files.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from .core import canonical_json

TRACE_SCHEMA_VERSION = 1


@dataclass
class NodeRecord:
    id: int
    parent: int | None
    step_text: str
    tokens: int
    score: float
    status: str
    depth: int
    expansion: int | None = None  # iteration that created this node


@dataclass
class HyperNodeRecord:
    hyper_id: int
    constituents: list[int]
    f: str
    v_bar: float


@dataclass
class SelectionRecord:
    iteration: int
    selected: list[int]
    kind: str  # expand | terminal | beam_keep | simulate | stop | depth_capped
    budget: int | None = None


@dataclass
class RolloutRecord:
    context: str  # mcts_simulation | solution_sample | difficulty
    from_node: int | None
    tokens: int
    terminal_answer: str | None
    value: float | None


@dataclass
class SearchTrace:
    meta: dict
    nodes: list[NodeRecord] = field(default_factory=list)
    hyper_nodes: list[HyperNodeRecord] = field(default_factory=list)
    selections: list[SelectionRecord] = field(default_factory=list)
    rollouts: list[RolloutRecord] = field(default_factory=list)
    result: dict = field(default_factory=dict)

    def total_tokens(self) -> int:
        """Re-sum every token recorded in the trace."""
        return sum(n.tokens for n in self.nodes) + sum(r.tokens for r in self.rollouts)

    def to_json_dict(self) -> dict:
        return {
            "schema_version": TRACE_SCHEMA_VERSION,
            "meta": self.meta,
            "nodes": [asdict(n) for n in self.nodes],
            "hyper_nodes": [asdict(h) for h in self.hyper_nodes],
            "selections": [asdict(s) for s in self.selections],
            "rollouts": [asdict(r) for r in self.rollouts],
            "result": self.result,
        }

    def to_json_bytes(self) -> bytes:
        return (canonical_json(self.to_json_dict()) + "\n").encode("utf-8")

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_json_bytes())

    @classmethod
    def from_json_dict(cls, obj: dict) -> "SearchTrace":
        if obj.get("schema_version") != TRACE_SCHEMA_VERSION:
            raise ValueError(f"unsupported trace schema version {obj.get('schema_version')!r}")
        return cls(
            meta=obj["meta"],
            nodes=[NodeRecord(**n) for n in obj["nodes"]],
            hyper_nodes=[HyperNodeRecord(**h) for h in obj["hyper_nodes"]],
            selections=[SelectionRecord(**s) for s in obj["selections"]],
            rollouts=[RolloutRecord(**r) for r in obj["rollouts"]],
            result=obj["result"],
        )

    @classmethod
    def load(cls, path: str | Path) -> "SearchTrace":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


def config_hash(config_dict: dict) -> str:
    """Stable short hash of a canonicalized configuration mapping."""
    return hashlib.sha256(canonical_json(config_dict).encode("utf-8")).hexdigest()[:16]


def load_trace_dir(path: str | Path) -> dict[str, SearchTrace]:
    """Load every ``*.json`` trace in a directory, keyed by problem id."""
    traces: dict[str, SearchTrace] = {}
    for file in sorted(Path(path).glob("*.json")):
        trace = SearchTrace.load(file)
        traces[str(trace.meta.get("problem_id", file.stem))] = trace
    return traces


def expansion_batches(trace: SearchTrace) -> dict[int, list[NodeRecord]]:
    """Group node records by the expansion iteration that created them."""
    batches: dict[int, list[NodeRecord]] = {}
    for node in trace.nodes:
        if node.expansion is not None:
            batches.setdefault(node.expansion, []).append(node)
    return batches
