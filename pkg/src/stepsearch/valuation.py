"""Verifier-target computation and score-variance analytics.

Verifier training targets come either from plain Monte Carlo returns
(fraction of correct rollouts, high variance) or from lambda-returns that
blend bootstrapped intermediate verifier values with the MC return:

    G_i^lambda = (1 - lambda) * sum_{t=1}^{T-i-1} lambda^(t-1) * v(s_{i+t})
                 + lambda^(T-i-1) * G_i

The weights form a convex combination, so the blended return always lies
between the smallest and largest input. At inference time, averaging the
predictions of several independent verifiers reduces score variance by
roughly 1/sqrt(k). This module also hosts the calibration analytics
(per-step Brier scores, per-difficulty score spread).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .backends.base import Policy, Verifier, rollout
from .core import (
    DEFAULT_ANSWER_MARKER,
    Problem,
    ReasoningState,
    RngStream,
    TokenMeter,
    answers_match,
    extract_answer,
)
from .errors import (
    EmptyEnsemble,
    EmptyRollouts,
    IndexOutOfRange,
    InsufficientSamples,
    MissingValues,
)

#: Default trace-decay for lambda-returns.
DEFAULT_LAMBDA = 0.8
#: Default rollouts per state when estimating MC returns.
DEFAULT_ROLLOUTS = 16
#: Rollout sampling temperature for label generation.
LABEL_ROLLOUT_TEMPERATURE = 1.0
#: Default verifier count for inference-time ensembling.
DEFAULT_ENSEMBLE_SIZE = 2


@dataclass
class TrajectoryRecord:
    """One sampled trajectory with per-state returns and verifier values.

    ``states`` holds s_0 .. s_{T-1}; ``verifier_values`` holds
    v(s_1) .. v(s_{T-1}) (``None`` entries mean "not yet scored");
    ``returns`` holds the MC return estimate G_i for every state.
    """

    states: list[ReasoningState]
    returns: list[float]
    verifier_values: list[float | None] = field(default_factory=list)
    rollout_count: int = DEFAULT_ROLLOUTS
    question: str = ""

    def __post_init__(self) -> None:
        t = len(self.states)
        if t < 1:
            raise ValueError("a trajectory needs at least one state")
        if len(self.returns) != t:
            raise ValueError("returns must align with states")
        if not self.verifier_values:
            self.verifier_values = [None] * (t - 1)
        if len(self.verifier_values) != t - 1:
            raise ValueError("verifier_values must cover s_1 .. s_{T-1}")
        for g in self.returns:
            if not 0.0 <= g <= 1.0:
                raise ValueError(f"return {g} outside [0, 1]")
        for v in self.verifier_values:
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"verifier value {v} outside [0, 1]")

    @property
    def total_steps(self) -> int:
        return len(self.states)


@dataclass(frozen=True)
class EnsembleConfig:
    """Declared verifier ensemble: member identities in reduction order."""

    members: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.members) < 1:
            raise ValueError("an ensemble needs at least one member")

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ValueLabel:
    """A (state text, regression target) pair for verifier training export."""

    state_text: str
    target: float
    method: str  # mc | td_lambda
    lam: float | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.target <= 1.0:
            raise ValueError(f"target {self.target} outside [0, 1]")

    def to_json_dict(self) -> dict:
        return {
            "state": self.state_text,
            "target": self.target,
            "method": self.method,
            "lambda": self.lam,
        }


def mc_return(rollout_correct: Sequence[bool]) -> float:
    """Fraction of correct rollouts: the plain Monte Carlo return."""
    if not rollout_correct:
        raise EmptyRollouts("MC return needs at least one rollout")
    return sum(1 for c in rollout_correct if c) / len(rollout_correct)


def lambda_return(record: TrajectoryRecord, i: int, lam: float) -> float:
    """Blend bootstrapped values with the MC return for state ``i``.

    ``lam=1`` reduces to the MC return; ``i = T-1`` returns G_i for any
    ``lam`` (empty bootstrap sum). Raises :class:`MissingValues` when a
    needed intermediate verifier value is absent.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    t_total = record.total_steps
    if not 0 <= i <= t_total - 1:
        raise IndexOutOfRange(f"step index {i} outside [0, {t_total - 1}]")
    horizon = t_total - i - 1
    acc = 0.0
    power = 1.0  # lambda^(t-1)
    for t in range(1, horizon + 1):
        v = record.verifier_values[i + t - 1]
        if v is None:
            raise MissingValues(f"verifier value for state {i + t} is missing")
        acc += power * v
        power *= lam
    # power is now lambda^horizon
    return (1.0 - lam) * acc + power * record.returns[i]


def ensemble_score(scores: Sequence[float]) -> float:
    """Mean of member scores, reduced in declared member order."""
    if not scores:
        raise EmptyEnsemble("ensemble needs at least one member score")
    first = scores[0]
    if all(s == first for s in scores):
        return first
    return math.fsum(scores) / len(scores)


class EnsembleVerifier:
    """Average of several verifiers, presented as a single verifier."""

    def __init__(self, members: Sequence[Verifier]) -> None:
        if not members:
            raise EmptyEnsemble("ensemble needs at least one member verifier")
        self.members = list(members)
        self.identity = "ensemble(" + ",".join(m.identity for m in self.members) + ")"

    @property
    def config(self) -> EnsembleConfig:
        return EnsembleConfig(tuple(m.identity for m in self.members))

    def score(self, state: ReasoningState) -> float:
        return ensemble_score([m.score(state) for m in self.members])


def score_std_by_difficulty(
    score_lists: Mapping[str, Sequence[float]],
    difficulty: Mapping[str, int],
) -> dict[int, float]:
    """Per-problem sample std of scores, averaged within difficulty level."""
    per_level: dict[int, list[float]] = {}
    for pid, scores in score_lists.items():
        if len(scores) < 2:
            raise InsufficientSamples(f"problem {pid!r} has fewer than 2 scores")
        if pid not in difficulty:
            raise KeyError(f"no difficulty level for problem {pid!r}")
        std = float(np.std(np.asarray(scores, dtype=float), ddof=1))
        per_level.setdefault(difficulty[pid], []).append(std)
    return {level: float(np.mean(vals)) for level, vals in sorted(per_level.items())}


def brier_by_step(
    predictions: Iterable[tuple[int, float, int]],
) -> dict[int, float]:
    """Mean squared error of predicted values against the binary outcome,
    grouped by step index."""
    groups: dict[int, list[float]] = {}
    for step_index, predicted, outcome in predictions:
        if outcome not in (0, 1):
            raise ValueError(f"outcome must be 0 or 1, got {outcome!r}")
        groups.setdefault(step_index, []).append((predicted - outcome) ** 2)
    return {step: math.fsum(vals) / len(vals) for step, vals in sorted(groups.items())}


def build_trajectory_record(
    policy: Policy,
    problem: Problem,
    rng: RngStream,
    rollouts_per_state: int = DEFAULT_ROLLOUTS,
    max_depth: int = 12,
    marker: str = DEFAULT_ANSWER_MARKER,
    meter: TokenMeter | None = None,
    temperature: float = LABEL_ROLLOUT_TEMPERATURE,
) -> TrajectoryRecord:
    """Sample one trajectory and estimate MC returns for each prefix state.

    The trajectory itself is a policy rollout from the root; every prefix
    then receives ``rollouts_per_state`` fresh rollouts whose terminal
    answers are checked against the reference answer.
    """
    if problem.reference_answer is None:
        raise ValueError(f"problem {problem.id!r} has no reference answer")
    trajectory = rollout(
        policy,
        ReasoningState.root(problem.id),
        rng.child("trajectory"),
        max_depth,
        temperature=temperature,
        marker=marker,
        meter=meter,
    ).state
    states = [ReasoningState.root(problem.id)] + [
        _prefix_state(trajectory, k, marker) for k in range(1, len(trajectory.steps) + 1)
    ]
    # Labels target states a policy can still act from; drop a terminal tail.
    if len(states) > 1 and states[-1].terminal:
        states = states[:-1]
    returns: list[float] = []
    for i, state in enumerate(states):
        correct: list[bool] = []
        for j in range(rollouts_per_state):
            res = rollout(
                policy,
                state,
                rng.child("mc", i, j),
                max_depth,
                temperature=temperature,
                marker=marker,
                meter=meter,
            )
            if res.state.terminal:
                match = answers_match(extract_answer(res.state, marker), problem.reference_answer)
                correct.append(bool(match))
            else:
                correct.append(False)
        returns.append(mc_return(correct))
    return TrajectoryRecord(
        states=states,
        returns=returns,
        rollout_count=rollouts_per_state,
        question=problem.question,
    )


def _prefix_state(trajectory: ReasoningState, k: int, marker: str) -> ReasoningState:
    state = ReasoningState.root(trajectory.problem_id)
    for step in trajectory.steps[:k]:
        state = state.extended(step, marker)
    return state


def export_value_labels(
    records: Iterable[TrajectoryRecord],
    method: str = "td_lambda",
    lam: float = DEFAULT_LAMBDA,
    verifier: Verifier | None = None,
) -> Iterator[ValueLabel]:
    """Produce one label per (trajectory, state), clamped to at most 1.

    ``td_lambda`` needs intermediate verifier values; records lacking them
    are scored with ``verifier`` first (its identity is the caller's to
    record). ``mc`` passes the MC returns through unchanged.
    """
    if method not in ("mc", "td_lambda"):
        raise ValueError(f"unknown labeling method {method!r}")
    for record in records:
        if method == "td_lambda" and any(v is None for v in record.verifier_values):
            if verifier is None:
                raise MissingValues(
                    "record lacks intermediate verifier values and no verifier was given"
                )
            record.verifier_values = [
                verifier.score(record.states[i + 1]) if v is None else v
                for i, v in enumerate(record.verifier_values)
            ]
        for i, state in enumerate(record.states):
            raw = record.returns[i] if method == "mc" else lambda_return(record, i, lam)
            yield ValueLabel(
                state_text=state.render(record.question or None),
                target=min(raw, 1.0),
                method=method,
                lam=lam if method == "td_lambda" else None,
            )


def write_value_labels(labels: Iterable[ValueLabel], path: str | Path) -> int:
    """Write labels as JSONL; returns the number of lines written."""
    count = 0
    with open(path, "w", encoding="utf-8") as fh:
        for label in labels:
            fh.write(json.dumps(label.to_json_dict(), sort_keys=True, ensure_ascii=False))
            fh.write("\n")
            count += 1
    return count
