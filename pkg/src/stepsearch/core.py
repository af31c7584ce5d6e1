"""Shared domain types: problems, reasoning states, tree nodes, token
accounting, seeded randomness, and answer normalization.

Everything downstream (backends, search loops, the harness) builds on the
types here. All types are immutable after construction except
:class:`TokenMeter` (atomic counter) and :class:`RngStream` (single-owner
generator).
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import NotTerminal

DEFAULT_ANSWER_MARKER = "The answer is"

#: Sentinel parent id for tree roots.
ROOT_PARENT = -1

_TRAILING_PUNCT = re.compile(r"[\s.,;:!?]+$")


def stable_hash64(*parts: object) -> int:
    """Order-sensitive 64-bit hash of the string forms of ``parts``.

    Used to derive RNG stream ids and per-problem streams; must be stable
    across processes (unlike the builtin salted ``hash``).
    """
    joined = "\x1f".join(str(p) for p in parts)
    digest = hashlib.blake2b(joined.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def canonical_json(obj: object) -> str:
    """Deterministic JSON encoding (sorted keys, tight separators)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class Problem:
    """One reasoning problem: a question and (optionally) its answer."""

    id: str
    question: str
    reference_answer: str | None = None

    def __post_init__(self) -> None:
        if not self.question:
            raise ValueError(f"problem {self.id!r} has an empty question")


@dataclass(frozen=True)
class Step:
    """One generated reasoning step plus its generation metadata.

    ``token_count`` is whatever the producing backend reported for this
    text; ``logprob`` is the backend's total log-probability for the step
    (sum over its tokens) when available.
    """

    text: str
    token_count: int
    logprob: float | None = None

    def __post_init__(self) -> None:
        if self.token_count < 0:
            raise ValueError("token_count must be non-negative")
        if self.logprob is not None and self.logprob > 0.0:
            raise ValueError("logprob must be <= 0")


@dataclass(frozen=True)
class ReasoningState:
    """A question id plus an ordered prefix of reasoning steps.

    ``terminal`` is true iff the last step contains the answer marker the
    state was built with; use :meth:`extended` so the flag stays in sync.
    """

    problem_id: str
    steps: tuple[Step, ...] = ()
    terminal: bool = False

    @classmethod
    def root(cls, problem_id: str) -> "ReasoningState":
        return cls(problem_id=problem_id)

    def extended(self, step: Step, marker: str = DEFAULT_ANSWER_MARKER) -> "ReasoningState":
        """Return a new state with ``step`` appended and terminality recomputed."""
        new = ReasoningState(self.problem_id, self.steps + (step,))
        return ReasoningState(self.problem_id, new.steps, detect_terminal(new, marker))

    @property
    def depth(self) -> int:
        return len(self.steps)

    def step_texts(self) -> list[str]:
        return [s.text for s in self.steps]

    def render(self, question: str | None = None) -> str:
        """Flatten to prompt text: question (if known) then one step per line."""
        lines = [question] if question else []
        lines.extend(s.text for s in self.steps)
        return "\n".join(lines)


class NodeStatus(str, Enum):
    UNEXPLORED = "unexplored"
    EXPANDED = "expanded"
    TERMINAL = "terminal"


@dataclass
class Node:
    """A reasoning state wrapped into one search tree.

    ``node_id`` strictly increases in creation order within a tree and is
    the global tie-breaker for every argmax in the engine. ``status`` is
    the only mutable field and is confined to the single-threaded search
    loop.
    """

    node_id: int
    parent_id: int
    state: ReasoningState
    score: float
    status: NodeStatus = NodeStatus.UNEXPLORED

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"node score {self.score} outside [0, 1]")

    @property
    def depth(self) -> int:
        return self.state.depth


class TokenMeter:
    """Thread-safe counter of generated tokens within one metered scope."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._count = 0

    def add(self, tokens: int) -> None:
        if tokens < 0:
            raise ValueError("cannot meter a negative token count")
        with self._lock:
            self._count += tokens

    @property
    def generated_tokens(self) -> int:
        return self._count


class RngStream:
    """Deterministic random stream identified by ``(seed, stream_id)``.

    Identical pairs reproduce identical draws; distinct stream ids are
    statistically independent. A stream must be confined to one worker at
    a time.
    """

    def __init__(self, seed: int, stream_id: int = 0) -> None:
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream_id = int(stream_id) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence((self.seed, self.stream_id)))
        )

    def child(self, *scope: object) -> "RngStream":
        """Derive an independent stream for a named sub-scope."""
        return RngStream(self.seed, stable_hash64(self.stream_id, *scope))

    def random(self) -> float:
        return float(self._gen.random())

    def integers(self, low: int, high: int | None = None) -> int:
        return int(self._gen.integers(low, high))

    def normal(self, loc: float = 0.0, scale: float = 1.0) -> float:
        return float(self._gen.normal(loc, scale))

    def choice_index(self, probs: Sequence[float]) -> int:
        """Sample an index from a probability vector (renormalized cumsum walk)."""
        total = float(sum(probs))
        if total <= 0.0:
            raise ValueError("probability vector must have positive mass")
        r = self.random() * total
        acc = 0.0
        for i, p in enumerate(probs):
            acc += p
            if r < acc:
                return i
        return len(probs) - 1

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def detect_terminal(state: ReasoningState, marker: str = DEFAULT_ANSWER_MARKER) -> bool:
    """True iff the last step's text contains ``marker`` (case-insensitive)."""
    if not marker:
        raise ValueError("answer marker must be non-empty")
    if not state.steps:
        return False
    return marker.lower() in state.steps[-1].text.lower()


def normalize_answer(text: str) -> str:
    """Canonicalize an extracted answer string.

    Trims whitespace, strips trailing punctuation, drops thousands
    separators, and renders numerics in a canonical form so that "7.0",
    "7." and "7" compare equal while non-numeric answers compare as
    trimmed strings.
    """
    s = _TRAILING_PUNCT.sub("", text.strip())
    numeric = s.replace(",", "")
    try:
        d = Decimal(numeric)
    except InvalidOperation:
        return s
    if d == d.to_integral_value():
        return str(int(d))
    out = format(d, "f").rstrip("0").rstrip(".")
    return out if out not in ("", "-") else "0"


def extract_answer(state: ReasoningState, marker: str = DEFAULT_ANSWER_MARKER) -> str:
    """Return the normalized answer after the last marker occurrence.

    Raises :class:`NotTerminal` when the state carries no marker.
    """
    if not detect_terminal(state, marker):
        raise NotTerminal(f"state for problem {state.problem_id!r} has no answer marker")
    text = state.steps[-1].text
    idx = text.lower().rfind(marker.lower())
    return normalize_answer(text[idx + len(marker):])


def answers_match(predicted: str | None, reference: str | None) -> bool | None:
    """Compare canonical answers; ``None`` when the reference is unknown."""
    if reference is None:
        return None
    if predicted is None:
        return False
    return normalize_answer(predicted) == normalize_answer(reference)


def load_problems(path: str | Path) -> list[Problem]:
    """Load a JSONL dataset (keys ``id``, ``question``, optional ``answer``)."""
    problems: list[Problem] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if "id" not in obj or "question" not in obj:
                raise ValueError(f"{path}:{lineno}: missing 'id' or 'question'")
            pid = str(obj["id"])
            if pid in seen:
                raise ValueError(f"{path}:{lineno}: duplicate problem id {pid!r}")
            seen.add(pid)
            answer = obj.get("answer")
            problems.append(
                Problem(pid, str(obj["question"]), None if answer is None else str(answer))
            )
    return problems


def save_problems(problems: Iterable[Problem], path: str | Path) -> None:
    """Write problems as JSONL with keys ``id``, ``question``, ``answer``."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            obj: dict[str, object] = {"id": p.id, "question": p.question}
            if p.reference_answer is not None:
                obj["answer"] = p.reference_answer
            fh.write(canonical_json(obj) + "\n")
