"""Backend interfaces and the backend-agnostic sampling helpers.

A policy proposes next steps, a verifier scores states into [0, 1], and
an embedder maps step text to a unit vector. Implementations must be safe
for concurrent invocation; the engine guarantees deterministic result
ordering on its side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence, runtime_checkable

import numpy as np

from ..core import DEFAULT_ANSWER_MARKER, ReasoningState, RngStream, Step, TokenMeter
from ..errors import LogprobsUnsupported


@runtime_checkable
class Policy(Protocol):
    def generate(
        self,
        state: ReasoningState,
        n: int,
        temperature: float,
        top_p: float,
        rng: RngStream,
    ) -> list[Step]:
        """Sample ``n`` candidate next steps for ``state``."""
        ...

    def score_continuation(
        self, state: ReasoningState, rollout_steps: Sequence[Step]
    ) -> list[float]:
        """Per-step log-probabilities of ``rollout_steps`` given ``state``."""
        ...


@runtime_checkable
class Verifier(Protocol):
    identity: str

    def score(self, state: ReasoningState) -> float:
        """Estimate, in [0, 1], how likely ``state`` leads to a correct answer."""
        ...


@runtime_checkable
class Embedder(Protocol):
    def embed(self, text: str) -> np.ndarray:
        """Unit-norm vector representation of ``text``; deterministic per text."""
        ...


SequenceProbabilityMode = str  # "raw" | "length_normalized"


def generate_steps(
    policy: Policy,
    state: ReasoningState,
    n: int,
    temperature: float,
    top_p: float,
    rng: RngStream,
    meter: TokenMeter | None = None,
) -> list[Step]:
    """Sample exactly ``n`` steps and meter their token counts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    steps = policy.generate(state, n, temperature, top_p, rng)
    if len(steps) != n:
        raise ValueError(f"policy returned {len(steps)} steps, expected {n}")
    if meter is not None:
        for s in steps:
            meter.add(s.token_count)
    return steps


@dataclass(frozen=True)
class RolloutResult:
    state: ReasoningState
    depth_capped: bool

    @property
    def terminal(self) -> bool:
        return self.state.terminal


def rollout(
    policy: Policy,
    state: ReasoningState,
    rng: RngStream,
    max_depth: int,
    temperature: float = 1.0,
    top_p: float = 1.0,
    marker: str = DEFAULT_ANSWER_MARKER,
    meter: TokenMeter | None = None,
) -> RolloutResult:
    """Append sampled steps until a terminal state or the depth cap."""
    if max_depth < 1:
        raise ValueError("max_depth must be >= 1")
    current = state
    for _ in range(max_depth):
        if current.terminal:
            return RolloutResult(current, depth_capped=False)
        step = generate_steps(policy, current, 1, temperature, top_p, rng, meter)[0]
        current = current.extended(step, marker)
    return RolloutResult(current, depth_capped=not current.terminal)


def sequence_probability(
    policy: Policy,
    state: ReasoningState,
    rollout_steps: Sequence[Step],
    mode: SequenceProbabilityMode = "raw",
) -> float:
    """Probability of a continuation under the policy, given ``state``.

    ``raw`` exponentiates the summed token log-probs; ``length_normalized``
    exponentiates their per-token mean, which removes the length penalty
    when comparing continuations of different depths.
    """
    if not rollout_steps:
        raise ValueError("rollout must be non-empty")
    if mode not in ("raw", "length_normalized"):
        raise ValueError(f"unknown mode {mode!r}")
    logprobs = policy.score_continuation(state, rollout_steps)
    if len(logprobs) != len(rollout_steps):
        raise LogprobsUnsupported("policy returned misaligned continuation scores")
    total = math.fsum(logprobs)
    if math.isinf(total) and total < 0:
        return 0.0
    if mode == "raw":
        return math.exp(total)
    tokens = sum(s.token_count for s in rollout_steps)
    if tokens <= 0:
        raise LogprobsUnsupported("rollout carries no token counts to normalize by")
    return math.exp(total / tokens)
