"""Similarity-pair data generation and embedder-quality metrics.

Two labeling pipelines produce (step A, step B, equivalent?) pairs for
post-training an embedding model externally:

* prompting: ask an instruction-following model the yes/no question from
  the bundled template and parse the leading Yes/No;
* consistency: sample K rollouts from the first state and measure how
  much swapping the states shifts the rollout probabilities
  (delta = mean |p(a|s_i) - p(a|s_j)|); small deltas mean equivalent,
  large deltas mean distinct, the band in between is discarded.

The quality metrics (binary cross-entropy on cosine similarity, an edit
distance baseline, Pearson correlation) evaluate embedders against such
labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from .backends.base import Policy, rollout, sequence_probability
from .core import DEFAULT_ANSWER_MARKER, ReasoningState, RngStream, Step
from .errors import LengthMismatch, ZeroVariance
from .trace import SearchTrace, expansion_batches

LABEL_SAME = 1
LABEL_DISTINCT = 0
DISCARD = None

_BCE_CLAMP = 1e-6


@dataclass(frozen=True)
class ConsistencyConfig:
    """Thresholds and sampling settings for consistency-based labeling."""

    alpha: float = 0.02
    beta: float = 0.08
    rollouts: int = 2  # K
    probability_mode: str = "raw"  # raw | length_normalized
    rollout_depth: int = 12
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < self.beta:
            raise ValueError("thresholds must satisfy 0 < alpha < beta")
        if self.rollouts < 1:
            raise ValueError("rollouts must be >= 1")
        if self.probability_mode not in ("raw", "length_normalized"):
            raise ValueError("probability_mode must be raw or length_normalized")


@dataclass(frozen=True)
class SimilarityPair:
    """A labeled step pair; ``label`` is None for discarded pairs."""

    step_a: str
    step_b: str
    label: int | None
    source: str  # prompting | consistency
    delta: float | None = None

    def to_json_dict(self) -> dict:
        return {
            "a": self.step_a,
            "b": self.step_b,
            "y": self.label,
            "source": self.source,
            "delta": self.delta,
        }


def consistency_delta(
    state_a: ReasoningState,
    state_b: ReasoningState,
    policy: Policy,
    rng: RngStream,
    config: ConsistencyConfig | None = None,
    marker: str = DEFAULT_ANSWER_MARKER,
) -> float:
    """Mean absolute probability shift of rollouts when states swap.

    Rollouts are sampled from the first state (fixing one side keeps the
    measurement reproducible) and scored as continuations of both.
    """
    config = config or ConsistencyConfig()
    total = 0.0
    for k in range(config.rollouts):
        res = rollout(
            policy,
            state_a,
            rng.child("delta", k),
            config.rollout_depth,
            temperature=config.temperature,
            marker=marker,
        )
        steps = res.state.steps[len(state_a.steps):]
        if not steps:
            continue
        p_a = sequence_probability(policy, state_a, steps, config.probability_mode)
        p_b = sequence_probability(policy, state_b, steps, config.probability_mode)
        total += abs(p_a - p_b)
    return total / config.rollouts


def label_pair(delta: float, config: ConsistencyConfig | None = None) -> int | None:
    """Threshold a delta into same (1), distinct (0), or discard (None)."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    config = config or ConsistencyConfig()
    if delta < config.alpha:
        return LABEL_SAME
    if delta > config.beta:
        return LABEL_DISTINCT
    return DISCARD


class TextCompleter(Protocol):
    """Minimal text-in/text-out surface used by prompting-based labeling."""

    def complete(self, prompt: str) -> str: ...


def equivalence_prompt_template() -> str:
    ref = resources.files(__package__).joinpath("data/equivalence_prompt.txt")
    return ref.read_text(encoding="utf-8")


def render_equivalence_prompt(step_a: str, step_b: str) -> str:
    return (
        equivalence_prompt_template()
        .replace("{STEP_A}", step_a)
        .replace("{STEP_B}", step_b)
    )


def prompt_label(step_a: str, step_b: str, llm: TextCompleter) -> int | None:
    """Ask the judge model; parse the leading Yes/No (case-insensitive).

    Unparseable responses are discarded (None).
    """
    response = llm.complete(render_equivalence_prompt(step_a, step_b))
    head = response.strip().lower()
    if head.startswith("yes"):
        return LABEL_SAME
    if head.startswith("no"):
        return LABEL_DISTINCT
    return DISCARD


def bce_objective(cosine_similarity: float, label: int) -> float:
    """Binary cross-entropy of a cosine similarity against a 0/1 label.

    The similarity is clamped into [1e-6, 1 - 1e-6] before the logs: cosine
    can be non-positive, where the objective is otherwise undefined.
    """
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    g = min(1.0 - _BCE_CLAMP, max(_BCE_CLAMP, cosine_similarity))
    return -(label * math.log(g) + (1 - label) * math.log(1.0 - g))


def edit_distance_similarity(a: str, b: str) -> float:
    """1 - Levenshtein(a, b) / max(|a|, |b|); two empty strings score 1."""
    if a == b:
        return 1.0
    if not a or not b:
        return 0.0
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return 1.0 - prev[-1] / max(len(a), len(b))


def pearson_correlation(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} xs vs {len(ys)} ys")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points")
    mean_x = math.fsum(xs) / n
    mean_y = math.fsum(ys) / n
    dx = [x - mean_x for x in xs]
    dy = [y - mean_y for y in ys]
    var_x = math.fsum(d * d for d in dx)
    var_y = math.fsum(d * d for d in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ZeroVariance("correlation undefined for constant input")
    cov = math.fsum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


def mine_sibling_pairs(
    traces: Iterable[SearchTrace],
    max_pairs: int | None = None,
) -> Iterator[tuple[str, ReasoningState, ReasoningState]]:
    """Yield (problem_id, state_a, state_b) for sibling steps within one
    expansion batch of recorded traces: exactly the population the merger
    must discriminate.

    States are rebuilt from the trace's node records so consistency
    labeling can roll them forward.
    """
    emitted = 0
    for trace in traces:
        problem_id = str(trace.meta.get("problem_id", ""))
        marker = str(trace.meta.get("answer_marker", DEFAULT_ANSWER_MARKER))
        by_id = {n.id: n for n in trace.nodes}

        def rebuild(node_id: int) -> ReasoningState:
            chain = []
            cur = by_id[node_id]
            while cur.parent is not None:
                chain.append(cur)
                cur = by_id[cur.parent]
            state = ReasoningState.root(problem_id)
            for rec in reversed(chain):
                state = state.extended(Step(rec.step_text, rec.tokens), marker)
            return state

        for _, batch in sorted(expansion_batches(trace).items()):
            fresh = [n for n in batch if n.status != "terminal"]
            for i in range(len(fresh)):
                for j in range(i + 1, len(fresh)):
                    if fresh[i].step_text == fresh[j].step_text:
                        continue
                    yield problem_id, rebuild(fresh[i].id), rebuild(fresh[j].id)
                    emitted += 1
                    if max_pairs is not None and emitted >= max_pairs:
                        return


def label_pairs_consistency(
    traces: Iterable[SearchTrace],
    policy: Policy,
    rng: RngStream,
    config: ConsistencyConfig | None = None,
    max_pairs: int | None = None,
) -> Iterator[SimilarityPair]:
    """Run the consistency pipeline over mined sibling pairs."""
    config = config or ConsistencyConfig()
    for idx, (pid, state_a, state_b) in enumerate(
        mine_sibling_pairs(traces, max_pairs)
    ):
        delta = consistency_delta(
            state_a, state_b, policy, rng.child("pair", pid, idx), config
        )
        yield SimilarityPair(
            step_a=state_a.steps[-1].text,
            step_b=state_b.steps[-1].text,
            label=label_pair(delta, config),
            source="consistency",
            delta=delta,
        )


def label_pairs_prompting(
    traces: Iterable[SearchTrace],
    llm: TextCompleter,
    max_pairs: int | None = None,
) -> Iterator[SimilarityPair]:
    """Run the prompting pipeline over mined sibling pairs."""
    for _, state_a, state_b in mine_sibling_pairs(traces, max_pairs):
        a, b = state_a.steps[-1].text, state_b.steps[-1].text
        yield SimilarityPair(
            step_a=a, step_b=b, label=prompt_label(a, b, llm), source="prompting"
        )


def write_pairs(
    pairs: Iterable[SimilarityPair],
    path: str | Path,
    keep_discarded: bool = False,
) -> tuple[int, int]:
    """Write labeled pairs as JSONL; returns (written, discarded)."""
    written = discarded = 0
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            if pair.label is None and not keep_discarded:
                discarded += 1
                continue
            fh.write(json.dumps(pair.to_json_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")
            written += 1
    return written, discarded
