"""Fully scripted task backend with enumerable ground truth.

Each problem is a rooted DAG. A state lists outgoing step templates; a
template has a sampling probability, a set of surface-form aliases
(paraphrase duplicates), a token cost, and optionally a terminal answer.
The scripted policy samples templates, the oracle verifier computes exact
state values by enumeration, and the exact-alias embedder maps every
alias of one template to the same unit vector (distinct templates are
orthogonal).

Suite JSON schema (one file per suite)::

    {
      "schema_version": 1,
      "problems": [
        {
          "id": "...", "question": "...", "answer": "...", "root": "s0",
          "states": {
            "s0": {"edges": [
              {"to": "s1", "prob": 0.6, "aliases": ["..."], "tokens": 6},
              {"to": "x0", "prob": 0.4, "aliases": ["... The answer is 13."],
               "tokens": 4, "answer": "13"}
            ]},
            "s1": {"edges": []}
          }
        }
      ]
    }

Three builders ship with the package: a deterministic chain, a
duplicate-alias fanout, and a stochastic ladder with per-rung success
probabilities. Small canonical instances are bundled as JSON under
``backends/specs/``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ..core import (
    DEFAULT_ANSWER_MARKER,
    Problem,
    ReasoningState,
    RngStream,
    Step,
    extract_answer,
    normalize_answer,
    stable_hash64,
)
from ..errors import SpecValidationError, UnknownState

SUITE_SCHEMA_VERSION = 1

_PROB_TOLERANCE = 1e-9


@dataclass(frozen=True)
class EdgeTemplate:
    """One outgoing step template of a scripted state."""

    to: str
    prob: float
    aliases: tuple[str, ...]
    tokens: int
    answer: str | None = None


@dataclass
class SyntheticTaskSpec:
    """A rooted DAG describing one scripted problem."""

    problem_id: str
    question: str
    answer: str
    root: str
    states: dict[str, tuple[EdgeTemplate, ...]]

    # alias text -> (source state, edge index); built on validation
    _alias_map: dict[str, tuple[str, int]] = field(default_factory=dict, repr=False)
    _value_memo: dict[str, float] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.root not in self.states:
            raise SpecValidationError(f"{self.problem_id}: root {self.root!r} not a state")
        self._alias_map.clear()
        self._value_memo.clear()
        marker = DEFAULT_ANSWER_MARKER.lower()
        has_terminal = False
        for state_id in sorted(self.states):
            edges = self.states[state_id]
            if edges:
                total = math.fsum(e.prob for e in edges)
                if abs(total - 1.0) > _PROB_TOLERANCE:
                    raise SpecValidationError(
                        f"{self.problem_id}/{state_id}: edge probabilities sum to {total}"
                    )
            for idx, edge in enumerate(edges):
                if edge.prob <= 0.0:
                    raise SpecValidationError(
                        f"{self.problem_id}/{state_id}: edge {idx} has non-positive prob"
                    )
                if edge.to not in self.states:
                    raise SpecValidationError(
                        f"{self.problem_id}/{state_id}: edge {idx} targets unknown state"
                    )
                if not edge.aliases:
                    raise SpecValidationError(
                        f"{self.problem_id}/{state_id}: edge {idx} has no aliases"
                    )
                if edge.tokens < 0:
                    raise SpecValidationError(
                        f"{self.problem_id}/{state_id}: edge {idx} has negative tokens"
                    )
                if edge.answer is not None:
                    has_terminal = True
                for alias in edge.aliases:
                    if alias in self._alias_map:
                        raise SpecValidationError(
                            f"{self.problem_id}: duplicate alias text {alias!r}"
                        )
                    carries_marker = marker in alias.lower()
                    if edge.answer is None and carries_marker:
                        raise SpecValidationError(
                            f"{self.problem_id}/{state_id}: non-answer alias contains the "
                            f"answer marker: {alias!r}"
                        )
                    if edge.answer is not None:
                        if not carries_marker:
                            raise SpecValidationError(
                                f"{self.problem_id}/{state_id}: answer alias lacks the "
                                f"answer marker: {alias!r}"
                            )
                        probe = ReasoningState.root(self.problem_id).extended(
                            Step(alias, edge.tokens)
                        )
                        got = extract_answer(probe)
                        if got != normalize_answer(edge.answer):
                            raise SpecValidationError(
                                f"{self.problem_id}/{state_id}: alias {alias!r} extracts "
                                f"{got!r}, expected {edge.answer!r}"
                            )
                    self._alias_map[alias] = (state_id, idx)
        if not has_terminal:
            raise SpecValidationError(f"{self.problem_id}: no terminal template")
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        WHITE, GREY, BLACK = 0, 1, 2
        color = {s: WHITE for s in self.states}

        def visit(s: str) -> None:
            color[s] = GREY
            for edge in self.states[s]:
                if color[edge.to] == GREY:
                    raise SpecValidationError(f"{self.problem_id}: cycle through {edge.to!r}")
                if color[edge.to] == WHITE:
                    visit(edge.to)
            color[s] = BLACK

        for s in sorted(self.states):
            if color[s] == WHITE:
                visit(s)

    # -- navigation ----------------------------------------------------

    def resolve_alias(self, text: str) -> tuple[str, int] | None:
        return self._alias_map.get(text)

    def edge_for_alias(self, text: str) -> EdgeTemplate | None:
        hit = self._alias_map.get(text)
        if hit is None:
            return None
        state_id, idx = hit
        return self.states[state_id][idx]

    def locate(self, state: ReasoningState) -> str:
        """Map a reasoning state to the DAG state it occupies."""
        if state.problem_id != self.problem_id:
            raise UnknownState(f"state belongs to {state.problem_id!r}, not {self.problem_id!r}")
        current = self.root
        for pos, step in enumerate(state.steps):
            hit = self._alias_map.get(step.text)
            if hit is None or hit[0] != current:
                raise UnknownState(
                    f"{self.problem_id}: step {pos} ({step.text!r}) is not an outgoing "
                    f"template of state {current!r}"
                )
            edge = self.states[hit[0]][hit[1]]
            if edge.answer is not None and pos != len(state.steps) - 1:
                raise UnknownState(f"{self.problem_id}: terminal step {pos} is not last")
            current = edge.to
        return current

    def node_value(self, state_id: str) -> float:
        """Exact probability a policy rollout from ``state_id`` ends correct."""
        if state_id not in self.states:
            raise UnknownState(f"{self.problem_id}: unknown state {state_id!r}")
        memo = self._value_memo
        if state_id in memo:
            return memo[state_id]
        correct = normalize_answer(self.answer)
        value = 0.0
        for edge in self.states[state_id]:
            if edge.answer is not None:
                outcome = 1.0 if normalize_answer(edge.answer) == correct else 0.0
                value += edge.prob * outcome
            else:
                value += edge.prob * self.node_value(edge.to)
        memo[state_id] = value
        return value

    def templates(self) -> list[tuple[str, int]]:
        """All (state, edge index) pairs in deterministic order."""
        return [
            (state_id, idx)
            for state_id in sorted(self.states)
            for idx in range(len(self.states[state_id]))
        ]

    def to_json_dict(self) -> dict:
        return {
            "id": self.problem_id,
            "question": self.question,
            "answer": self.answer,
            "root": self.root,
            "states": {
                state_id: {
                    "edges": [
                        {
                            "to": e.to,
                            "prob": e.prob,
                            "aliases": list(e.aliases),
                            "tokens": e.tokens,
                            **({"answer": e.answer} if e.answer is not None else {}),
                        }
                        for e in self.states[state_id]
                    ]
                }
                for state_id in sorted(self.states)
            },
        }

    @classmethod
    def from_json_dict(cls, obj: Mapping) -> "SyntheticTaskSpec":
        try:
            states = {
                state_id: tuple(
                    EdgeTemplate(
                        to=str(e["to"]),
                        prob=float(e["prob"]),
                        aliases=tuple(str(a) for a in e["aliases"]),
                        tokens=int(e["tokens"]),
                        answer=None if e.get("answer") is None else str(e["answer"]),
                    )
                    for e in body.get("edges", [])
                )
                for state_id, body in obj["states"].items()
            }
            return cls(
                problem_id=str(obj["id"]),
                question=str(obj["question"]),
                answer=str(obj["answer"]),
                root=str(obj["root"]),
                states=states,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SpecValidationError(f"malformed task spec: {exc}") from exc


def true_state_value(spec: SyntheticTaskSpec, state: ReasoningState | str) -> float:
    """Oracle value: exact probability of reaching the correct answer.

    Terminal states evaluate directly to 1.0 or 0.0 by answer match;
    non-terminal states are located in the DAG and enumerated
    (alias-insensitively).
    """
    if isinstance(state, str):
        return spec.node_value(state)
    if state.terminal:
        predicted = extract_answer(state)
        return 1.0 if predicted == normalize_answer(spec.answer) else 0.0
    return spec.node_value(spec.locate(state))


class SyntheticSuite:
    """A collection of scripted problems addressed by problem id."""

    def __init__(self, specs: Iterable[SyntheticTaskSpec]) -> None:
        self.specs: dict[str, SyntheticTaskSpec] = {}
        alias_owner: dict[str, str] = {}
        for spec in specs:
            if spec.problem_id in self.specs:
                raise SpecValidationError(f"duplicate problem id {spec.problem_id!r}")
            for alias in spec._alias_map:
                if alias in alias_owner:
                    raise SpecValidationError(
                        f"alias {alias!r} appears in both {alias_owner[alias]!r} "
                        f"and {spec.problem_id!r}"
                    )
                alias_owner[alias] = spec.problem_id
            self.specs[spec.problem_id] = spec

    def __getitem__(self, problem_id: str) -> SyntheticTaskSpec:
        try:
            return self.specs[problem_id]
        except KeyError:
            raise UnknownState(f"unknown problem id {problem_id!r}") from None

    def __len__(self) -> int:
        return len(self.specs)

    def problems(self) -> list[Problem]:
        return [
            Problem(s.problem_id, s.question, s.answer)
            for s in (self.specs[pid] for pid in sorted(self.specs))
        ]

    def save(self, path: str | Path) -> None:
        payload = {
            "schema_version": SUITE_SCHEMA_VERSION,
            "problems": [self.specs[pid].to_json_dict() for pid in sorted(self.specs)],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "SyntheticSuite":
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        return cls.from_json_dict(payload)

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "SyntheticSuite":
        if payload.get("schema_version") != SUITE_SCHEMA_VERSION:
            raise SpecValidationError(
                f"unsupported suite schema version {payload.get('schema_version')!r}"
            )
        return cls(SyntheticTaskSpec.from_json_dict(p) for p in payload.get("problems", []))


def builtin_suite(name: str) -> SyntheticSuite:
    """Load one of the bundled example suites: chain, alias_fanout, noisy_ladder."""
    ref = resources.files(__package__).joinpath(f"specs/{name}.json")
    with ref.open("r", encoding="utf-8") as fh:
        return SyntheticSuite.from_json_dict(json.load(fh))


class SyntheticPolicy:
    """Scripted policy: samples outgoing templates of the located state.

    ``temperature=0`` picks the argmax-probability template (ties to the
    lowest edge index) and its first alias. Otherwise template weights are
    ``p ** (1/temperature)`` restricted to the nucleus of mass ``top_p``.
    Step log-probs always report the base (temperature-1) distribution so
    that continuation scoring is sampling-temperature independent.
    """

    def __init__(self, suite: SyntheticSuite) -> None:
        self.suite = suite

    def _edges(self, state: ReasoningState) -> tuple[SyntheticTaskSpec, Sequence[EdgeTemplate]]:
        spec = self.suite[state.problem_id]
        node = spec.locate(state)
        edges = spec.states[node]
        if not edges:
            raise UnknownState(
                f"{state.problem_id}: state {node!r} has no outgoing templates"
            )
        return spec, edges

    def generate(
        self,
        state: ReasoningState,
        n: int,
        temperature: float,
        top_p: float,
        rng: RngStream,
    ) -> list[Step]:
        _, edges = self._edges(state)
        steps: list[Step] = []
        if temperature <= 0.0:
            best = max(range(len(edges)), key=lambda i: (edges[i].prob, -i))
            edge = edges[best]
            for _ in range(n):
                steps.append(Step(edge.aliases[0], edge.tokens, math.log(edge.prob)))
            return steps

        weights = [e.prob ** (1.0 / temperature) for e in edges]
        order = sorted(range(len(edges)), key=lambda i: (-weights[i], i))
        total = math.fsum(weights)
        kept: list[int] = []
        acc = 0.0
        for i in order:
            kept.append(i)
            acc += weights[i] / total
            if acc >= top_p - 1e-12:
                break
        kept_weights = [weights[i] for i in kept]
        for _ in range(n):
            pick = kept[rng.choice_index(kept_weights)]
            edge = edges[pick]
            alias = edge.aliases[rng.integers(len(edge.aliases))]
            steps.append(Step(alias, edge.tokens, math.log(edge.prob)))
        return steps

    def score_continuation(
        self, state: ReasoningState, rollout_steps: Sequence[Step]
    ) -> list[float]:
        spec = self.suite[state.problem_id]
        try:
            current: str | None = spec.locate(state)
        except UnknownState:
            current = None
        logprobs: list[float] = []
        for step in rollout_steps:
            hit = spec.resolve_alias(step.text) if current is not None else None
            if hit is None or hit[0] != current:
                logprobs.append(float("-inf"))
                current = None
                continue
            edge = spec.states[hit[0]][hit[1]]
            logprobs.append(math.log(edge.prob))
            current = edge.to
        return logprobs


class OracleVerifier:
    """Returns the exact enumerated state value."""

    def __init__(self, suite: SyntheticSuite, identity: str = "oracle") -> None:
        self.suite = suite
        self.identity = identity

    def score(self, state: ReasoningState) -> float:
        return true_state_value(self.suite[state.problem_id], state)


class NoisyOracleVerifier:
    """Oracle value plus seeded Gaussian noise, clamped to [0, 1].

    The noise is a pure function of (state text, seed), so repeated calls
    on the same state agree and distinct seeds behave as independent
    verifier identities. ``sigma_overrides`` assigns per-problem noise
    levels (e.g. larger sigma on harder problems) on top of the default.
    """

    def __init__(
        self,
        suite: SyntheticSuite,
        sigma: float,
        seed: int,
        identity: str | None = None,
        sigma_overrides: Mapping[str, float] | None = None,
    ) -> None:
        if sigma < 0:
            raise ValueError("sigma must be non-negative")
        self.suite = suite
        self.sigma = sigma
        self.sigma_overrides = dict(sigma_overrides or {})
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.identity = identity if identity is not None else f"noisy-oracle-{seed}"

    def score(self, state: ReasoningState) -> float:
        value = true_state_value(self.suite[state.problem_id], state)
        sigma = self.sigma_overrides.get(state.problem_id, self.sigma)
        if sigma == 0.0:
            return value
        key = stable_hash64(state.problem_id, *state.step_texts())
        gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence((self.seed, key))))
        noisy = value + float(gen.normal(0.0, sigma))
        return min(1.0, max(0.0, noisy))


class AliasEmbedder:
    """Exact-alias embedding: one-hot on the suite-wide template index.

    All aliases of one template share a unit vector; distinct templates
    are orthogonal. Unknown texts raise :class:`UnknownState`.
    """

    def __init__(self, suite: SyntheticSuite) -> None:
        self.suite = suite
        self._index: dict[str, int] = {}
        dim = 0
        for pid in sorted(suite.specs):
            spec = suite.specs[pid]
            for state_id, edge_idx in spec.templates():
                for alias in spec.states[state_id][edge_idx].aliases:
                    self._index[alias] = dim
                dim += 1
        self.dimension = dim

    def embed(self, text: str) -> np.ndarray:
        try:
            tidx = self._index[text]
        except KeyError:
            raise UnknownState(f"text is not a known template alias: {text!r}") from None
        vec = np.zeros(self.dimension, dtype=float)
        vec[tidx] = 1.0
        return vec


# -- built-in spec families -------------------------------------------


def _answer_aliases(prefix: str, answer: str, count: int) -> tuple[str, ...]:
    forms = (
        "{p} So the answer is {a}.",
        "{p} Therefore the answer is {a}",
        "{p} We conclude the answer is {a}.",
        "{p} Hence the answer is {a}",
    )
    return tuple(forms[i % len(forms)].format(p=f"{prefix}#{i}", a=answer) for i in range(count))


def make_chain_spec(
    index: int,
    depth: int = 3,
    answer: str | None = None,
    aliases_per_step: int = 1,
    tokens: int = 6,
) -> SyntheticTaskSpec:
    """Deterministic chain: one template per state, forced path to the answer."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pid = f"chain-{index:03d}"
    answer = str(7 * (index + 1)) if answer is None else answer
    states: dict[str, tuple[EdgeTemplate, ...]] = {}
    for k in range(depth - 1):
        aliases = tuple(
            f"{pid} step {k}: carry the running total forward (form {a})"
            for a in range(aliases_per_step)
        )
        states[f"s{k}"] = (EdgeTemplate(f"s{k + 1}", 1.0, aliases, tokens),)
    states[f"s{depth - 1}"] = (
        EdgeTemplate(
            "sink",
            1.0,
            _answer_aliases(f"{pid} final", answer, aliases_per_step),
            tokens,
            answer=answer,
        ),
    )
    states["sink"] = ()
    return SyntheticTaskSpec(
        problem_id=pid,
        question=f"Scripted chain task {index}: follow {depth} forced steps to the total.",
        answer=answer,
        root="s0",
        states=states,
    )


def make_alias_fanout_spec(
    index: int,
    depth: int = 6,
    alias_rate: float = 0.5,
    reference_expansion: int = 10,
    alias_forms: Sequence[int] = (1, 2),
    success: float = 0.6,
    tokens: int = 6,
    answer: str | None = None,
) -> SyntheticTaskSpec:
    """Duplicate-alias fanout: parallel equivalent routes under heavy
    re-sampling redundancy.

    Each non-final state offers ``round(reference_expansion * (1 -
    alias_rate))`` equally likely route templates; template ``j`` has
    ``alias_forms[j % len(alias_forms)]`` surface forms, so expansion
    batches contain both exact re-samples and paraphrase duplicates. All
    routes reconverge per level and carry the same success probability:
    every non-terminal state has the same interior value (``success``),
    which keeps verifier noise, not value signal, in charge of selection.
    The final level splits its mass between correct-answer templates
    (``success`` total) and one slip template to a wrong answer.
    """
    if not 0.0 <= alias_rate < 1.0:
        raise ValueError("alias_rate must lie in [0, 1)")
    if not 0.0 < success < 1.0:
        raise ValueError("success must lie in (0, 1)")
    if depth < 2:
        raise ValueError("depth must be >= 2")
    n_templates = max(1, round(reference_expansion * (1.0 - alias_rate)))
    pid = f"fanout-{index:03d}"
    answer = str(40 + index) if answer is None else answer
    states: dict[str, tuple[EdgeTemplate, ...]] = {}

    def forms(j: int) -> int:
        return max(1, alias_forms[j % len(alias_forms)])

    def level_states(level: int) -> list[str]:
        if level == 0:
            return ["g0"]
        return [f"g{level}r{j}" for j in range(n_templates)]

    for level in range(depth):
        final = level == depth - 1
        for src in level_states(level):
            edges = []
            if final:
                per_route = success / n_templates
                for j in range(n_templates):
                    edges.append(
                        EdgeTemplate(
                            "sink",
                            per_route,
                            _answer_aliases(f"{pid} {src} route {j}", answer, forms(j)),
                            tokens,
                            answer=answer,
                        )
                    )
                wrong = str(900 + index)
                edges.append(
                    EdgeTemplate(
                        "sink",
                        1.0 - success,
                        _answer_aliases(f"{pid} {src} slip", wrong, 1),
                        tokens,
                        answer=wrong,
                    )
                )
            else:
                for j in range(n_templates):
                    aliases = tuple(
                        f"{pid} {src}: take route {j} at stage {level} (form {a})"
                        for a in range(forms(j))
                    )
                    edges.append(
                        EdgeTemplate(f"g{level + 1}r{j}", 1.0 / n_templates, aliases, tokens)
                    )
            states[src] = tuple(edges)
    states["sink"] = ()
    return SyntheticTaskSpec(
        problem_id=pid,
        question=(
            f"Scripted fanout task {index}: any sequence of {depth} routes reaches the goal."
        ),
        answer=answer,
        root="g0",
        states=states,
    )


def make_noisy_ladder_spec(
    index: int,
    continue_probs: Sequence[float] = (0.7, 0.6, 0.5, 0.8),
    tokens: int = 5,
    answer: str | None = None,
) -> SyntheticTaskSpec:
    """Stochastic ladder: each rung continues with probability ``p_k`` or
    drops into a rung-specific wrong answer.

    Oracle values are products of the remaining continue probabilities,
    which makes the family convenient for rollout statistics and value
    labeling studies.
    """
    if not continue_probs:
        raise ValueError("at least one rung is required")
    if any(not 0.0 < p < 1.0 for p in continue_probs):
        raise ValueError("continue probabilities must lie in (0, 1)")
    pid = f"ladder-{index:03d}"
    answer = str(100 + index) if answer is None else answer
    states: dict[str, tuple[EdgeTemplate, ...]] = {}
    rungs = len(continue_probs)
    for k, p in enumerate(continue_probs):
        wrong = str(900 + 10 * index + k)
        fail_edge = EdgeTemplate(
            "sink",
            1.0 - p,
            _answer_aliases(f"{pid} rung {k} slip", wrong, 2),
            tokens,
            answer=wrong,
        )
        if k == rungs - 1:
            up_edge = EdgeTemplate(
                "sink", p, _answer_aliases(f"{pid} top", answer, 2), tokens, answer=answer
            )
        else:
            up_edge = EdgeTemplate(
                f"r{k + 1}",
                p,
                (f"{pid} rung {k}: climb to rung {k + 1}",),
                tokens,
            )
        states[f"r{k}"] = (up_edge, fail_edge)
    states["sink"] = ()
    return SyntheticTaskSpec(
        problem_id=pid,
        question=f"Scripted ladder task {index}: climb {rungs} rungs without slipping.",
        answer=answer,
        root="r0",
        states=states,
    )
