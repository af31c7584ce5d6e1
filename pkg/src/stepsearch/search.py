"""Verifier-guided tree search: best-first, beam, dynamic-budget and MCTS,
plus the sampling baselines (greedy decode, self-consistency, best-of-N,
weighted voting).

All algorithms share one engine that owns node bookkeeping, token
metering, the trace, and deterministic randomness. A run is a
single-threaded loop; fixed (config, seed, dataset) reproduces a
byte-identical trace. Every argmax breaks ties by the lowest node id.

Merging plugs into expansion: freshly generated non-terminal siblings are
clustered on their step embeddings and each cluster enters the frontier
as one hyper-node whose score aggregates its constituents. Expanding a
hyper-node rotates generation over its constituents in descending-score
order. Terminal children never merge; answer aggregation is voting logic,
not state merging.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backends.base import Embedder, Policy, Verifier, generate_steps, rollout
from .core import (
    DEFAULT_ANSWER_MARKER,
    ROOT_PARENT,
    Node,
    NodeStatus,
    Problem,
    ReasoningState,
    RngStream,
    TokenMeter,
    answers_match,
    extract_answer,
    stable_hash64,
)
from .errors import NoSolutions, NoTerminalFound
from .merging import HyperNode, MergeOptions, merge_states
from .trace import (
    HyperNodeRecord,
    NodeRecord,
    RolloutRecord,
    SearchTrace,
    SelectionRecord,
    config_hash,
)
from .valuation import ensemble_score

ALGORITHMS = ("bfs", "beam", "tree", "mcts")

#: Default expansion size per algorithm when the config leaves it unset.
DEFAULT_EXPANSION = {"bfs": 10, "beam": 5, "tree": 10}


@dataclass(frozen=True)
class SearchConfig:
    """Knobs shared by all search algorithms (unused fields are ignored)."""

    algorithm: str = "bfs"
    expansion_size: int | None = None  # N; None -> per-algorithm default
    beam_size: int = 5  # B (beam only)
    expected_accuracy: float = 0.95  # epsilon (tree only)
    mcts_root_budget: int = 8
    mcts_child_budget: int = 4
    mcts_simulations: int = 2
    mcts_exploration: float = 1.0  # UCT constant c
    mcts_self_play: bool = False  # simulate with reference-answer correctness
    temperature: float = 0.8
    top_p: float = 1.0
    max_depth: int = 12
    max_total_expansions: int = 50
    merge: MergeOptions = field(default_factory=MergeOptions)
    answer_marker: str = DEFAULT_ANSWER_MARKER
    seed: int = 0

    def __post_init__(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.expansion_size is not None and self.expansion_size < 1:
            raise ValueError("expansion_size must be >= 1")
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0.0 < self.expected_accuracy < 1.0:
            raise ValueError("expected_accuracy must lie in (0, 1)")
        for name in ("mcts_root_budget", "mcts_child_budget", "mcts_simulations",
                     "max_depth", "max_total_expansions"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")

    @property
    def resolved_expansion(self) -> int:
        if self.expansion_size is not None:
            return self.expansion_size
        return DEFAULT_EXPANSION.get(self.algorithm, 10)

    def to_meta_dict(self) -> dict:
        return asdict(self)


@dataclass
class SearchBackends:
    """The model trio one run needs; multiple verifiers score as a mean."""

    policy: Policy
    verifiers: Sequence[Verifier] = ()
    embedder: Embedder | None = None


@dataclass(frozen=True)
class TerminalCandidate:
    node_id: int | None
    answer: str
    score: float | None


@dataclass
class SearchResult:
    problem_id: str
    chosen_state: ReasoningState | None
    predicted_answer: str | None
    terminal_candidates: list[TerminalCandidate]
    generated_tokens: int
    expansions: int
    incomplete: bool
    trace: SearchTrace
    chosen_node: int | None = None


def dynamic_expansion_budget(score: float, expected_accuracy: float, n_max: int) -> int:
    """Smallest sample count whose chance of at least one success reaches
    ``expected_accuracy`` when each sample succeeds with ``score``.

    Guarded at the extremes: near-certain states get one sample, hopeless
    states get the full budget. Always inside [1, n_max] and
    non-increasing in ``score``.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    if score >= 1.0 - 1e-6:
        return 1
    if score <= 1e-6:
        return n_max
    b = math.ceil(math.log(1.0 - expected_accuracy) / math.log(1.0 - score))
    return max(1, min(n_max, b))


class _Entry:
    """One frontier entry: a plain node or a hyper-node."""

    __slots__ = ("node", "hyper")

    def __init__(self, node: Node | None = None, hyper: HyperNode | None = None) -> None:
        if (node is None) == (hyper is None):
            raise ValueError("entry wraps exactly one of node/hyper")
        self.node = node
        self.hyper = hyper

    @property
    def score(self) -> float:
        return self.node.score if self.node is not None else self.hyper.v_bar

    @property
    def min_id(self) -> int:
        return self.node.node_id if self.node is not None else self.hyper.min_node_id

    @property
    def is_terminal(self) -> bool:
        return self.node is not None and self.node.state.terminal

    @property
    def depth(self) -> int:
        if self.node is not None:
            return self.node.depth
        return self.hyper.constituents[0].depth

    def next_parent(self) -> Node:
        return self.node if self.node is not None else self.hyper.next_constituent()

    def all_nodes(self) -> list[Node]:
        return [self.node] if self.node is not None else list(self.hyper.constituents)


def _pick(entries: Sequence[_Entry]) -> _Entry | None:
    """Highest score first; ties prefer the deeper entry, then the lowest
    node id.

    The depth component only matters under exact score ties (flat-valued
    regions): without it, stale shallow siblings would starve descent and
    a forced chain would never finish.
    """
    if not entries:
        return None
    return min(entries, key=lambda e: (-e.score, -e.depth, e.min_id))


class _Engine:
    """Per-run bookkeeping: nodes, trace, meter, and the sampling stream."""

    def __init__(
        self,
        problem: Problem,
        config: SearchConfig,
        backends: SearchBackends,
        label: str | None = None,
    ) -> None:
        self.problem = problem
        self.config = config
        self.backends = backends
        self.marker = config.answer_marker
        self.meter = TokenMeter()
        self.rng = RngStream(config.seed, stable_hash64("run", problem.id)).child("engine")
        self.nodes: list[Node] = []
        self.terminal_nodes: list[Node] = []
        self.rollout_candidates: list[TerminalCandidate] = []
        self.expansions = 0
        self._records: dict[int, NodeRecord] = {}
        self._hyper_records: dict[int, HyperNodeRecord] = {}
        self._hyper_count = 0
        self._embeddings: dict[int, np.ndarray] = {}
        self.trace = SearchTrace(
            meta={
                "problem_id": problem.id,
                "algorithm": label or config.algorithm,
                "seed": config.seed,
                "config_hash": config_hash(config.to_meta_dict()),
                "answer_marker": config.answer_marker,
            }
        )
        root_state = ReasoningState.root(problem.id)
        self.root = self._new_node(ROOT_PARENT, root_state, self.score_state(root_state), None)

    # -- scoring and node bookkeeping -----------------------------------

    def score_state(self, state: ReasoningState) -> float:
        if not self.backends.verifiers:
            return 0.0
        return ensemble_score([v.score(state) for v in self.backends.verifiers])

    def _new_node(
        self,
        parent_id: int,
        state: ReasoningState,
        score: float,
        expansion: int | None,
    ) -> Node:
        node = Node(
            node_id=len(self.nodes),
            parent_id=parent_id,
            state=state,
            score=score,
            status=NodeStatus.TERMINAL if state.terminal else NodeStatus.UNEXPLORED,
        )
        self.nodes.append(node)
        last = state.steps[-1] if state.steps else None
        record = NodeRecord(
            id=node.node_id,
            parent=None if parent_id == ROOT_PARENT else parent_id,
            step_text=last.text if last else "",
            tokens=last.token_count if last else 0,
            score=score,
            status=node.status.value,
            depth=node.depth,
            expansion=expansion,
        )
        self._records[node.node_id] = record
        self.trace.nodes.append(record)
        if node.state.terminal:
            self.terminal_nodes.append(node)
        return node

    def set_status(self, node: Node, status: NodeStatus) -> None:
        node.status = status
        self._records[node.node_id].status = status.value

    def log(
        self,
        iteration: int,
        selected: _Entry | Sequence[int],
        kind: str,
        budget: int | None = None,
    ) -> None:
        ids = (
            sorted(n.node_id for n in selected.all_nodes())
            if isinstance(selected, _Entry)
            else sorted(selected)
        )
        self.trace.selections.append(SelectionRecord(iteration, ids, kind, budget))

    # -- expansion -------------------------------------------------------

    def _embedding(self, node: Node) -> np.ndarray:
        cached = self._embeddings.get(node.node_id)
        if cached is not None:
            return cached
        if self.backends.embedder is None:
            raise ValueError("state merging requires an embedder backend")
        if self.config.merge.embed_full_state:
            text = node.state.render(self.problem.question)
        else:
            text = node.state.steps[-1].text if node.state.steps else self.problem.question
        vec = self.backends.embedder.embed(text)
        self._embeddings[node.node_id] = vec
        return vec

    def expand_entry(
        self,
        entry: _Entry,
        budget: int,
        iteration: int,
        frontier: list[_Entry] | None = None,
    ) -> list[_Entry]:
        """Generate ``budget`` children, score them, and group them into
        frontier entries (merging if enabled)."""
        for n in entry.all_nodes():
            self.set_status(n, NodeStatus.EXPANDED)
        children: list[Node] = []
        for _ in range(budget):
            parent = entry.next_parent()
            step = generate_steps(
                self.backends.policy,
                parent.state,
                1,
                self.config.temperature,
                self.config.top_p,
                self.rng,
                self.meter,
            )[0]
            child_state = parent.state.extended(step, self.marker)
            children.append(
                self._new_node(parent.node_id, child_state, self.score_state(child_state), iteration)
            )
        self.expansions += 1

        terminal_entries = [_Entry(node=c) for c in children if c.state.terminal]
        rest = [c for c in children if not c.state.terminal]
        if not rest:
            return terminal_entries
        merge = self.config.merge
        if not merge.enabled:
            return terminal_entries + [_Entry(node=c) for c in rest]

        pool = list(rest)
        if merge.frontier_wide and frontier is not None:
            depth = rest[0].depth
            siblings = [
                e for e in list(frontier)
                if not e.is_terminal and e.depth == depth
            ]
            for e in siblings:
                frontier.remove(e)
                pool.extend(e.all_nodes())
                if e.hyper is not None:
                    # The rebuilt grouping supersedes the dissolved record.
                    self._hyper_records.pop(e.hyper.hyper_id, None)
        embeddings = [self._embedding(n) for n in pool]
        hypers = merge_states(pool, embeddings, merge.cluster, merge.f, self._hyper_count)
        self._hyper_count += len(hypers)
        for h in hypers:
            self._hyper_records[h.hyper_id] = HyperNodeRecord(
                hyper_id=h.hyper_id,
                constituents=h.constituent_ids,
                f=h.aggregation,
                v_bar=h.v_bar,
            )
        return terminal_entries + [_Entry(hyper=h) for h in hypers]

    # -- rollouts ----------------------------------------------------

    def run_rollout(
        self,
        from_state: ReasoningState,
        rng: RngStream,
        temperature: float,
    ) -> tuple[ReasoningState, int, bool]:
        """Roll out to terminal/depth cap; returns (state, tokens, capped)."""
        remaining = max(1, self.config.max_depth - from_state.depth)
        res = rollout(
            self.backends.policy,
            from_state,
            rng,
            remaining,
            temperature=temperature,
            top_p=self.config.top_p,
            marker=self.marker,
            meter=self.meter,
        )
        added = res.state.steps[len(from_state.steps):]
        return res.state, sum(s.token_count for s in added), res.depth_capped

    def add_rollout_record(
        self,
        context: str,
        from_node: int | None,
        tokens: int,
        state: ReasoningState,
        value: float | None,
    ) -> str | None:
        answer = extract_answer(state, self.marker) if state.terminal else None
        self.trace.rollouts.append(
            RolloutRecord(context=context, from_node=from_node, tokens=tokens,
                          terminal_answer=answer, value=value)
        )
        if answer is not None:
            self.rollout_candidates.append(TerminalCandidate(None, answer, value))
        return answer

    # -- results -------------------------------------------------------

    def _candidates(self) -> list[TerminalCandidate]:
        node_candidates = [
            TerminalCandidate(n.node_id, extract_answer(n.state, self.marker), n.score)
            for n in sorted(self.terminal_nodes, key=lambda n: n.node_id)
        ]
        return node_candidates + list(self.rollout_candidates)

    def _result(
        self,
        status: str,
        chosen: Node | None,
        predicted: str | None,
        incomplete: bool,
        reason: str | None = None,
        chosen_state: ReasoningState | None = None,
    ) -> SearchResult:
        self.trace.hyper_nodes = [
            self._hyper_records[h] for h in sorted(self._hyper_records)
        ]
        self.trace.result = {
            "status": status,
            "reason": reason,
            "chosen_node": chosen.node_id if chosen is not None else None,
            "predicted_answer": predicted,
            "terminal_candidates": [asdict(c) for c in self._candidates()],
            "generated_tokens": self.meter.generated_tokens,
            "expansions": self.expansions,
        }
        return SearchResult(
            problem_id=self.problem.id,
            chosen_state=chosen.state if chosen is not None else chosen_state,
            predicted_answer=predicted,
            terminal_candidates=self._candidates(),
            generated_tokens=self.meter.generated_tokens,
            expansions=self.expansions,
            incomplete=incomplete,
            trace=self.trace,
            chosen_node=chosen.node_id if chosen is not None else None,
        )

    def finalize_terminal(self, node: Node) -> SearchResult:
        return self._result(
            "terminal", node, extract_answer(node.state, self.marker), incomplete=False
        )

    def finalize_terminal_state(self, state: ReasoningState) -> SearchResult:
        return self._result(
            "terminal", None, extract_answer(state, self.marker),
            incomplete=False, chosen_state=state,
        )

    def finalize_incomplete(self, reason: str) -> SearchResult:
        if self.terminal_nodes:
            best = min(self.terminal_nodes, key=lambda n: (-n.score, n.node_id))
            return self._result(
                "incomplete", best, extract_answer(best.state, self.marker),
                incomplete=True, reason=reason,
            )
        leaves = [n for n in self.nodes if n.status is NodeStatus.UNEXPLORED]
        best = min(leaves or self.nodes, key=lambda n: (-n.score, n.node_id))
        return self._result("incomplete", best, None, incomplete=True, reason=reason)


def _require_verifier(backends: SearchBackends, algorithm: str) -> None:
    if not backends.verifiers:
        raise ValueError(f"{algorithm} search requires at least one verifier")


# -- best-first family ---------------------------------------------------


def _best_first(
    problem: Problem,
    config: SearchConfig,
    backends: SearchBackends,
    budget_fn: Callable[[_Entry], int],
) -> SearchResult:
    eng = _Engine(problem, config, backends)
    frontier: list[_Entry] = [_Entry(node=eng.root)]
    iteration = 0
    while True:
        iteration += 1
        entry = _pick(frontier)
        if entry is None:
            return eng.finalize_incomplete("frontier_exhausted")
        if entry.is_terminal:
            eng.log(iteration, entry, "terminal")
            return eng.finalize_terminal(entry.node)
        if eng.expansions >= config.max_total_expansions:
            eng.log(iteration, entry, "stop")
            return eng.finalize_incomplete("budget_exhausted")
        if entry.depth >= config.max_depth:
            frontier.remove(entry)
            eng.log(iteration, entry, "depth_capped")
            continue
        budget = budget_fn(entry)
        eng.log(iteration, entry, "expand", budget)
        frontier.remove(entry)
        frontier.extend(eng.expand_entry(entry, budget, iteration, frontier))


def bfs_search(
    problem: Problem, config: SearchConfig, backends: SearchBackends
) -> SearchResult:
    """Best-first search: repeatedly expand the highest-scored unexplored
    entry; stop when a terminal state tops the frontier."""
    _require_verifier(backends, "bfs")
    n = config.resolved_expansion
    return _best_first(problem, config, backends, lambda entry: n)


def tree_search(
    problem: Problem, config: SearchConfig, backends: SearchBackends
) -> SearchResult:
    """Best-first search with a per-selection dynamic expansion budget."""
    _require_verifier(backends, "tree")
    n = config.resolved_expansion
    eps = config.expected_accuracy
    return _best_first(
        problem,
        config,
        backends,
        lambda entry: dynamic_expansion_budget(entry.score, eps, n),
    )


# -- beam search ---------------------------------------------------------


def beam_search(
    problem: Problem, config: SearchConfig, backends: SearchBackends
) -> SearchResult:
    """Depth-synchronous beam search.

    Each beam entry is expanded with the full budget; merging (if on)
    groups each expansion batch before ranking, so the beam holds
    hyper-nodes. Terminal children leave the beam into a finished pool;
    the highest-scored finished state wins. The beam's own width bounds
    the work, so ``max_total_expansions`` is not consulted.
    """
    _require_verifier(backends, "beam")
    eng = _Engine(problem, config, backends)
    n = config.resolved_expansion
    beam: list[_Entry] = [_Entry(node=eng.root)]
    finished: list[Node] = []
    iteration = 0
    for _depth in range(config.max_depth):
        candidates: list[_Entry] = []
        for entry in sorted(beam, key=lambda e: (-e.score, e.min_id)):
            iteration += 1
            eng.log(iteration, entry, "expand", n)
            for child in eng.expand_entry(entry, n, iteration):
                if child.is_terminal:
                    finished.append(child.node)
                else:
                    candidates.append(child)
        if not candidates:
            break
        kept = sorted(candidates, key=lambda e: (-e.score, e.min_id))[: config.beam_size]
        iteration += 1
        eng.log(
            iteration,
            [nid for e in kept for nid in (nd.node_id for nd in e.all_nodes())],
            "beam_keep",
        )
        beam = kept
    if finished:
        best = min(finished, key=lambda nd: (-nd.score, nd.node_id))
        return eng.finalize_terminal(best)
    raise NoTerminalFound(f"beam search found no terminal state for {problem.id!r}")


# -- MCTS ------------------------------------------------------------------


@dataclass
class MctsNodeStats:
    """Visit statistics kept per tree entry during MCTS."""

    visits: int = 0
    total_value: float = 0.0

    @property
    def mean_value(self) -> float:
        return self.total_value / self.visits if self.visits > 0 else 0.0


class _MctsNode:
    __slots__ = ("entry", "stats", "children")

    def __init__(self, entry: _Entry) -> None:
        self.entry = entry
        self.stats = MctsNodeStats()
        self.children: list["_MctsNode"] = []


def mcts_search(
    problem: Problem, config: SearchConfig, backends: SearchBackends
) -> SearchResult:
    """UCT-style Monte Carlo tree search.

    Selection descends by mean value plus ``c * sqrt(ln(parent)/child)``
    with unvisited children first (ties to the lowest id). Expansion uses
    the root budget at the root and the child budget elsewhere, merging
    each batch when enabled. Simulation runs policy rollouts from the
    best-scored new child; the rollout value is the reference-answer
    correctness in self-play mode, otherwise the verifier score of the
    rollout terminal. Values backpropagate along the selection path. One
    iteration consumes one expansion, so ``max_total_expansions`` is the
    iteration budget.
    """
    _require_verifier(backends, "mcts")
    eng = _Engine(problem, config, backends)
    c = config.mcts_exploration
    root_m = _MctsNode(_Entry(node=eng.root))
    tree_terminals: list[_MctsNode] = []

    def terminal_value(node: Node) -> float:
        if config.mcts_self_play and problem.reference_answer is not None:
            match = answers_match(
                extract_answer(node.state, eng.marker), problem.reference_answer
            )
            return 1.0 if match else 0.0
        return node.score

    def backprop(path: list[_MctsNode], value: float) -> None:
        for m in path:
            m.stats.visits += 1
            m.stats.total_value += value

    for iteration in range(1, config.max_total_expansions + 1):
        path = [root_m]
        cur = root_m
        while cur.children:
            unvisited = [ch for ch in cur.children if ch.stats.visits == 0]
            if unvisited:
                cur = min(unvisited, key=lambda ch: ch.entry.min_id)
            else:
                log_n = math.log(cur.stats.visits)
                cur = min(
                    cur.children,
                    key=lambda ch: (
                        -(ch.stats.mean_value + c * math.sqrt(log_n / ch.stats.visits)),
                        ch.entry.min_id,
                    ),
                )
            path.append(cur)
        if cur.entry.is_terminal:
            eng.log(iteration, cur.entry, "terminal")
            backprop(path, terminal_value(cur.entry.node))
            continue
        if cur.entry.depth >= config.max_depth:
            eng.log(iteration, cur.entry, "depth_capped")
            backprop(path, cur.entry.score)
            continue
        budget = config.mcts_root_budget if cur is root_m else config.mcts_child_budget
        eng.log(iteration, cur.entry, "expand", budget)
        new_entries = eng.expand_entry(cur.entry, budget, iteration)
        cur.children = [_MctsNode(e) for e in new_entries]
        for child in cur.children:
            if child.entry.is_terminal:
                tree_terminals.append(child)

        sim = min(cur.children, key=lambda ch: (-ch.entry.score, ch.entry.min_id))
        if sim.entry.is_terminal:
            value = terminal_value(sim.entry.node)
        else:
            values = []
            for _r in range(config.mcts_simulations):
                origin = sim.entry.next_parent()
                end_state, tokens, capped = eng.run_rollout(
                    origin.state, eng.rng, config.temperature
                )
                if not end_state.terminal:
                    v = 0.0
                elif config.mcts_self_play and problem.reference_answer is not None:
                    v = 1.0 if answers_match(
                        extract_answer(end_state, eng.marker), problem.reference_answer
                    ) else 0.0
                else:
                    v = eng.score_state(end_state)
                eng.add_rollout_record(
                    "mcts_simulation", origin.node_id, tokens, end_state, v
                )
                values.append(v)
            value = math.fsum(values) / len(values)
        backprop(path, value)

    if tree_terminals:
        best = min(
            tree_terminals,
            key=lambda m: (-m.stats.visits, -m.entry.node.score, m.entry.min_id),
        )
        return eng.finalize_terminal(best.entry.node)
    if eng.rollout_candidates:
        # Rollout states are not tree nodes; report the best answer directly.
        ranked = min(
            range(len(eng.rollout_candidates)),
            key=lambda i: (-(eng.rollout_candidates[i].score or 0.0), i),
        )
        cand = eng.rollout_candidates[ranked]
        return eng._result("terminal", None, cand.answer, incomplete=False)
    raise NoTerminalFound(f"MCTS found no terminal state for {problem.id!r}")


# -- sampling baselines ---------------------------------------------------


def greedy_decode(
    problem: Problem, backends: SearchBackends, config: SearchConfig | None = None
) -> SearchResult:
    """Temperature-zero stepwise decoding to a terminal state or depth cap."""
    config = config or SearchConfig()
    eng = _Engine(problem, config, backends, label="greedy")
    current = eng.root
    for iteration in range(1, config.max_depth + 1):
        if current.state.terminal:
            break
        eng.log(iteration, _Entry(node=current), "expand", 1)
        eng.set_status(current, NodeStatus.EXPANDED)
        step = generate_steps(
            backends.policy, current.state, 1, 0.0, 1.0, eng.rng, eng.meter
        )[0]
        child_state = current.state.extended(step, eng.marker)
        current = eng._new_node(
            current.node_id, child_state, eng.score_state(child_state), iteration
        )
    if current.state.terminal:
        return eng.finalize_terminal(current)
    return eng.finalize_incomplete("depth_capped")


@dataclass(frozen=True)
class SolutionSample:
    """One full rollout from the root, with its score when a verifier ran."""

    index: int
    state: ReasoningState
    answer: str | None
    score: float | None
    tokens: int
    depth_capped: bool


def sample_solutions(
    problem: Problem,
    n: int,
    config: SearchConfig,
    backends: SearchBackends,
    meter: TokenMeter | None = None,
) -> list[SolutionSample]:
    """``n`` independent policy rollouts from the root state."""
    if n < 1:
        raise ValueError("n must be >= 1")
    base = RngStream(config.seed, stable_hash64("run", problem.id))
    root = ReasoningState.root(problem.id)
    samples: list[SolutionSample] = []
    for i in range(n):
        res = rollout(
            backends.policy,
            root,
            base.child("solution", i),
            config.max_depth,
            temperature=config.temperature,
            top_p=config.top_p,
            marker=config.answer_marker,
            meter=meter,
        )
        terminal = res.state.terminal
        answer = extract_answer(res.state, config.answer_marker) if terminal else None
        score = None
        if backends.verifiers and terminal:
            score = ensemble_score([v.score(res.state) for v in backends.verifiers])
        samples.append(
            SolutionSample(
                index=i,
                state=res.state,
                answer=answer,
                score=score,
                tokens=sum(s.token_count for s in res.state.steps),
                depth_capped=res.depth_capped,
            )
        )
    return samples


AGGREGATION_MODES = ("majority", "best_of_n", "weighted")


def aggregate_answers(samples: Sequence[SolutionSample], mode: str) -> str:
    """Reduce terminal solutions to one predicted answer.

    majority: most frequent answer; ties prefer the higher summed score,
    then the first answer seen. best_of_n: the answer of the
    highest-scored solution. weighted: the answer with the largest summed
    score.
    """
    if mode not in AGGREGATION_MODES:
        raise ValueError(f"mode must be one of {AGGREGATION_MODES}")
    terminal = [s for s in samples if s.answer is not None]
    if not terminal:
        raise NoSolutions("no terminal solutions to aggregate")
    if mode == "best_of_n":
        best = min(terminal, key=lambda s: (-(s.score or 0.0), s.index))
        return best.answer  # type: ignore[return-value]
    stats: dict[str, list[float]] = {}
    first_seen: dict[str, int] = {}
    for pos, s in enumerate(terminal):
        assert s.answer is not None
        if s.answer not in stats:
            stats[s.answer] = [0, 0.0]
            first_seen[s.answer] = pos
        stats[s.answer][0] += 1
        stats[s.answer][1] += s.score or 0.0
    if mode == "majority":
        return min(
            stats,
            key=lambda a: (-stats[a][0], -stats[a][1], first_seen[a]),
        )
    return min(stats, key=lambda a: (-stats[a][1], first_seen[a]))


def run_sampling_method(
    problem: Problem,
    config: SearchConfig,
    backends: SearchBackends,
    n: int,
    mode: str,
    label: str,
) -> SearchResult:
    """Sample ``n`` solutions, aggregate, and package a traced result."""
    eng = _Engine(problem, config, backends, label=label)
    samples = sample_solutions(problem, n, config, backends, eng.meter)
    for s in samples:
        eng.add_rollout_record("solution_sample", eng.root.node_id, s.tokens, s.state, s.score)
    try:
        predicted = aggregate_answers(samples, mode)
    except NoSolutions:
        return eng.finalize_incomplete("no_terminal_samples")
    chosen = next(s for s in samples if s.answer == predicted)
    return eng._result(
        "terminal", None, predicted, incomplete=False, chosen_state=chosen.state
    )
