"""Experiment orchestration: dataset runs, difficulty bucketing, metrics,
and report emission.

A run maps one method over a dataset with per-problem random streams and
token meters, persists one trace per problem, and emits a CSV report plus
a JSON summary. The JSON summary is deterministic for a fixed (config,
dataset, seed); wall-clock timings live only in the CSV.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

from .backends.base import Policy, Verifier
from .backends.http import HttpBackendConfig, HttpEmbedder, HttpPolicy
from .backends.synthetic import (
    AliasEmbedder,
    NoisyOracleVerifier,
    OracleVerifier,
    SyntheticPolicy,
    SyntheticSuite,
)
from .core import (
    DEFAULT_ANSWER_MARKER,
    Problem,
    ReasoningState,
    RngStream,
    answers_match,
    canonical_json,
    extract_answer,
    load_problems,
    stable_hash64,
)
from .errors import DatasetMismatch, StepSearchError
from .search import (
    SearchBackends,
    SearchConfig,
    SearchResult,
    beam_search,
    bfs_search,
    greedy_decode,
    mcts_search,
    run_sampling_method,
    tree_search,
)
from .trace import SearchTrace, config_hash, load_trace_dir
from .valuation import DEFAULT_ENSEMBLE_SIZE
from .backends.base import rollout as policy_rollout

REPORT_SCHEMA_VERSION = 1

METHODS = (
    "greedy",
    "self_consistency",
    "best_of_n",
    "weighted",
    "bfs",
    "beam",
    "tree",
    "mcts",
)

VERIFIER_KINDS = ("oracle", "noisy")


@dataclass
class RunConfig:
    """Everything one experiment needs; paths must exist."""

    method: str
    out_dir: Path
    seed: int = 0
    suite_path: Path | None = None
    dataset_path: Path | None = None
    http_policy: HttpBackendConfig | None = None
    http_embedder: HttpBackendConfig | None = None
    verifier: str = "oracle"
    verifier_sigma: float = 0.1
    # Member count for the noisy-verifier ensemble (oracle mode is exact
    # and always uses a single member).
    ensemble_size: int = DEFAULT_ENSEMBLE_SIZE
    search: SearchConfig = field(default_factory=SearchConfig)
    sample_n: int = 10
    workers: int = 1
    difficulty_path: Path | None = None

    def __post_init__(self) -> None:
        self.out_dir = Path(self.out_dir)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.verifier not in VERIFIER_KINDS:
            raise ValueError(f"verifier must be one of {VERIFIER_KINDS}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.suite_path is None and self.dataset_path is None:
            raise ValueError("either a synthetic suite or a dataset is required")
        for path in (self.suite_path, self.dataset_path, self.difficulty_path):
            if path is not None and not Path(path).exists():
                raise FileNotFoundError(path)


@dataclass
class ReportRow:
    problem_id: str
    predicted: str | None
    correct: bool | None
    tokens: int
    wall_time_ms: float | None
    level: int | None
    trace_file: str | None
    error: str | None = None


@dataclass
class RunReport:
    method: str
    seed: int
    config_hash: str
    rows: list[ReportRow]
    verifier_identities: list[str] = field(default_factory=list)

    @property
    def accuracy(self) -> float | None:
        labeled = [r for r in self.rows if r.correct is not None]
        if not labeled:
            return None
        return sum(1 for r in labeled if r.correct) / len(labeled)

    @property
    def mean_tokens_k(self) -> float:
        if not self.rows:
            return 0.0
        return sum(r.tokens for r in self.rows) / len(self.rows) / 1000.0

    def per_level(self) -> dict[int, dict[str, float]]:
        levels: dict[int, list[ReportRow]] = {}
        for row in self.rows:
            if row.level is not None:
                levels.setdefault(row.level, []).append(row)
        out: dict[int, dict[str, float]] = {}
        for level, rows in sorted(levels.items()):
            labeled = [r for r in rows if r.correct is not None]
            out[level] = {
                "count": len(rows),
                "accuracy": (
                    sum(1 for r in labeled if r.correct) / len(labeled) if labeled else None
                ),
                "mean_tokens_k": sum(r.tokens for r in rows) / len(rows) / 1000.0,
            }
        return out

    def to_json_dict(self) -> dict:
        # wall_time_ms is excluded: the JSON summary is byte-deterministic.
        rows = []
        for r in sorted(self.rows, key=lambda r: r.problem_id):
            d = asdict(r)
            d.pop("wall_time_ms")
            rows.append(d)
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "verifier_identities": self.verifier_identities,
            "aggregates": {
                "n_problems": len(self.rows),
                "accuracy": self.accuracy,
                "mean_tokens_k": self.mean_tokens_k,
                "per_level": {str(k): v for k, v in self.per_level().items()},
            },
            "rows": rows,
        }

    def save(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        json_path = out / "report.json"
        json_path.write_text(canonical_json(self.to_json_dict()) + "\n", encoding="utf-8")
        csv_path = out / "report.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["problem_id", "predicted", "correct", "tokens", "wall_time_ms",
                 "level", "trace_file", "error"]
            )
            for r in sorted(self.rows, key=lambda r: r.problem_id):
                writer.writerow(
                    [r.problem_id, r.predicted, r.correct, r.tokens,
                     "" if r.wall_time_ms is None else f"{r.wall_time_ms:.1f}",
                     r.level, r.trace_file, r.error]
                )
        return json_path, csv_path

    @classmethod
    def load(cls, path: str | Path) -> "RunReport":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        if obj.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {obj.get('schema_version')!r}")
        rows = [ReportRow(wall_time_ms=None, **r) for r in obj["rows"]]
        return cls(
            method=obj["method"],
            seed=obj["seed"],
            config_hash=obj["config_hash"],
            rows=rows,
            verifier_identities=obj.get("verifier_identities", []),
        )


# -- difficulty bucketing --------------------------------------------------


@dataclass(frozen=True)
class DifficultyEntry:
    failure_rate: float
    level: int


@dataclass
class DifficultyIndex:
    """Per-problem failure rate over seeded rollouts, bucketed into 4 levels."""

    rollouts: int
    seed: int
    entries: dict[str, DifficultyEntry]

    def level(self, problem_id: str) -> int | None:
        entry = self.entries.get(problem_id)
        return entry.level if entry else None

    def save(self, path: str | Path) -> None:
        payload = {
            "rollouts": self.rollouts,
            "seed": self.seed,
            "entries": {
                pid: {"failure_rate": e.failure_rate, "level": e.level}
                for pid, e in sorted(self.entries.items())
            },
        }
        Path(path).write_text(canonical_json(payload) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DifficultyIndex":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            rollouts=obj["rollouts"],
            seed=obj["seed"],
            entries={
                pid: DifficultyEntry(e["failure_rate"], e["level"])
                for pid, e in obj["entries"].items()
            },
        )


def failure_rate_level(rate: float) -> int:
    """Quartile bucket of a failure rate, 1 (easy) to 4 (hard)."""
    return 1 + math.floor(min(rate, 0.999) * 4)


def build_difficulty_index(
    problems: Sequence[Problem],
    policy: Policy,
    rollouts: int = 64,
    seed: int = 0,
    max_depth: int = 12,
    temperature: float = 1.0,
    marker: str = DEFAULT_ANSWER_MARKER,
) -> DifficultyIndex:
    """Failure frequency of seeded policy rollouts, per problem."""
    entries: dict[str, DifficultyEntry] = {}
    for problem in problems:
        if problem.reference_answer is None:
            raise ValueError(f"problem {problem.id!r} lacks a reference answer")
        base = RngStream(seed, stable_hash64("difficulty", problem.id))
        wrong = 0
        for i in range(rollouts):
            res = policy_rollout(
                policy,
                ReasoningState.root(problem.id),
                base.child(i),
                max_depth,
                temperature=temperature,
                marker=marker,
            )
            ok = res.state.terminal and answers_match(
                extract_answer(res.state, marker), problem.reference_answer
            )
            if not ok:
                wrong += 1
        rate = wrong / rollouts
        entries[problem.id] = DifficultyEntry(rate, failure_rate_level(rate))
    return DifficultyIndex(rollouts=rollouts, seed=seed, entries=entries)


# -- experiment runner -------------------------------------------------------


@dataclass
class RunContext:
    problems: list[Problem]
    backends: SearchBackends
    suite: SyntheticSuite | None


def synthetic_verifiers(
    suite: SyntheticSuite, kind: str, sigma: float, ensemble_size: int, seed: int
) -> list[Verifier]:
    """Oracle or seeded noisy-oracle members with stable identities."""
    if kind == "oracle":
        return [OracleVerifier(suite)]
    return [
        NoisyOracleVerifier(suite, sigma, stable_hash64("verifier", seed, i))
        for i in range(ensemble_size)
    ]


def build_run_context(config: RunConfig) -> RunContext:
    if config.suite_path is not None:
        suite = SyntheticSuite.load(config.suite_path)
        problems = suite.problems()
        if config.dataset_path is not None:
            wanted = {p.id for p in load_problems(config.dataset_path)}
            problems = [p for p in problems if p.id in wanted]
        verifiers = synthetic_verifiers(
            suite, config.verifier, config.verifier_sigma, config.ensemble_size, config.seed
        )
        embedder = AliasEmbedder(suite) if config.search.merge.enabled else None
        backends = SearchBackends(
            policy=SyntheticPolicy(suite), verifiers=verifiers, embedder=embedder
        )
        return RunContext(problems=problems, backends=backends, suite=suite)
    problems = load_problems(config.dataset_path)
    if config.http_policy is None:
        raise ValueError("dataset runs need an HTTP policy backend")
    policy = HttpPolicy(config.http_policy, problems)
    embedder = (
        HttpEmbedder(config.http_embedder) if config.http_embedder is not None else None
    )
    # Scoring verifiers over plain HTTP are not provided; runs on real
    # datasets are policy-only unless the caller wires custom verifiers.
    return RunContext(
        problems=problems,
        backends=SearchBackends(policy=policy, verifiers=(), embedder=embedder),
        suite=None,
    )


def run_method(
    method: str,
    problem: Problem,
    search_config: SearchConfig,
    backends: SearchBackends,
    sample_n: int = 10,
) -> SearchResult:
    """Dispatch one problem to a search algorithm or sampling baseline."""
    if method == "greedy":
        return greedy_decode(problem, backends, search_config)
    if method == "self_consistency":
        unscored = SearchBackends(backends.policy, (), backends.embedder)
        return run_sampling_method(
            problem, search_config, unscored, sample_n, "majority", "self_consistency"
        )
    if method == "best_of_n":
        return run_sampling_method(
            problem, search_config, backends, sample_n, "best_of_n", "best_of_n"
        )
    if method == "weighted":
        return run_sampling_method(
            problem, search_config, backends, sample_n, "weighted", "weighted"
        )
    algo = {"bfs": bfs_search, "beam": beam_search, "tree": tree_search, "mcts": mcts_search}
    config = replace(search_config, algorithm=method)
    return algo[method](problem, config, backends)


def run_experiment(config: RunConfig) -> RunReport:
    """Run the configured method over every problem; write traces + report.

    Per-problem failures are recorded in their row and the run continues.
    Rows are independent of the worker count: every problem derives its
    randomness from (seed, problem id) alone.
    """
    ctx = build_run_context(config)
    difficulty = (
        DifficultyIndex.load(config.difficulty_path) if config.difficulty_path else None
    )
    traces_dir = config.out_dir / "traces"
    traces_dir.mkdir(parents=True, exist_ok=True)
    search_config = replace(config.search, seed=config.seed)

    def one(problem: Problem) -> ReportRow:
        started = time.perf_counter()
        try:
            result = run_method(
                config.method, problem, search_config, ctx.backends, config.sample_n
            )
        except StepSearchError as exc:
            return ReportRow(
                problem_id=problem.id,
                predicted=None,
                correct=False if problem.reference_answer is not None else None,
                tokens=0,
                wall_time_ms=(time.perf_counter() - started) * 1e3,
                level=difficulty.level(problem.id) if difficulty else None,
                trace_file=None,
                error=f"{type(exc).__name__}: {exc}",
            )
        trace_file = traces_dir / f"{problem.id}.json"
        result.trace.save(trace_file)
        return ReportRow(
            problem_id=problem.id,
            predicted=result.predicted_answer,
            correct=answers_match(result.predicted_answer, problem.reference_answer),
            tokens=result.generated_tokens,
            wall_time_ms=(time.perf_counter() - started) * 1e3,
            level=difficulty.level(problem.id) if difficulty else None,
            trace_file=str(trace_file.relative_to(config.out_dir)),
            error=None,
        )

    if config.workers == 1:
        rows = [one(p) for p in ctx.problems]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            rows = list(pool.map(one, ctx.problems))
    rows.sort(key=lambda r: r.problem_id)
    report = RunReport(
        method=config.method,
        seed=config.seed,
        config_hash=config_hash(search_config.to_meta_dict()),
        rows=rows,
        verifier_identities=[v.identity for v in ctx.backends.verifiers],
    )
    report.save(config.out_dir)
    return report


# -- report comparison -----------------------------------------------------


@dataclass
class RunComparison:
    delta_accuracy: float | None
    token_ratio: float | None
    per_level: dict[int, dict[str, float | None]]
    notes: list[str] = field(default_factory=list)

    def to_csv_rows(self) -> list[list]:
        rows: list[list] = [
            ["level", "tokens_a_k", "tokens_b_k", "delta_tokens_k", "token_ratio",
             "accuracy_a", "accuracy_b", "delta_accuracy"]
        ]
        for level, cells in sorted(self.per_level.items()):
            rows.append(
                [level, cells["tokens_a_k"], cells["tokens_b_k"],
                 cells["delta_tokens_k"], cells["token_ratio"],
                 cells["accuracy_a"], cells["accuracy_b"], cells["delta_accuracy"]]
            )
        return rows


def compare_runs(report_a: RunReport, report_b: RunReport) -> RunComparison:
    """Paired comparison of two runs over the same problems."""
    ids_a = {r.problem_id for r in report_a.rows}
    ids_b = {r.problem_id for r in report_b.rows}
    if ids_a != ids_b:
        missing = sorted(ids_a ^ ids_b)[:5]
        raise DatasetMismatch(f"reports cover different problems, e.g. {missing}")
    acc_a, acc_b = report_a.accuracy, report_b.accuracy
    delta_acc = None if acc_a is None or acc_b is None else acc_b - acc_a
    ratio = (
        report_b.mean_tokens_k / report_a.mean_tokens_k
        if report_a.mean_tokens_k > 0
        else None
    )
    lv_a, lv_b = report_a.per_level(), report_b.per_level()
    per_level: dict[int, dict[str, float | None]] = {}
    notes: list[str] = []
    for level in sorted(set(lv_a) | set(lv_b)):
        if level not in lv_a or level not in lv_b:
            notes.append(f"level {level} present in only one report; row omitted")
            continue
        a, b = lv_a[level], lv_b[level]
        if not a["count"] or not b["count"]:
            notes.append(f"level {level} has no problems; row omitted")
            continue
        acc_da = (
            None
            if a["accuracy"] is None or b["accuracy"] is None
            else b["accuracy"] - a["accuracy"]
        )
        per_level[level] = {
            "tokens_a_k": a["mean_tokens_k"],
            "tokens_b_k": b["mean_tokens_k"],
            "delta_tokens_k": b["mean_tokens_k"] - a["mean_tokens_k"],
            "token_ratio": (
                b["mean_tokens_k"] / a["mean_tokens_k"] if a["mean_tokens_k"] > 0 else None
            ),
            "accuracy_a": a["accuracy"],
            "accuracy_b": b["accuracy"],
            "delta_accuracy": acc_da,
        }
    return RunComparison(
        delta_accuracy=delta_acc, token_ratio=ratio, per_level=per_level, notes=notes
    )


def write_comparison_csv(comparison: RunComparison, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        for row in comparison.to_csv_rows():
            writer.writerow(row)
        writer.writerow([])
        writer.writerow(["overall_delta_accuracy", comparison.delta_accuracy])
        writer.writerow(["overall_token_ratio", comparison.token_ratio])
        for note in comparison.notes:
            writer.writerow(["note", note])


# -- trace analytics ---------------------------------------------------------


def similarity_degree_by_batch_size(
    traces: Iterable[SearchTrace],
) -> dict[int, float]:
    """Mean redundancy (batch size / group count) per expansion batch size.

    Groups come from the hyper-node records; unmerged nodes in a batch
    (terminal children bypass merging) count as singleton groups. Only
    traces recorded with merging enabled contribute.
    """
    from .trace import expansion_batches

    degrees: dict[int, list[float]] = {}
    for trace in traces:
        constituent_to_hyper: dict[int, int] = {}
        for h in trace.hyper_nodes:
            for nid in h.constituents:
                constituent_to_hyper[nid] = h.hyper_id
        if not constituent_to_hyper:
            continue
        for _, batch in expansion_batches(trace).items():
            groups = set()
            singletons = 0
            for node in batch:
                if node.id in constituent_to_hyper:
                    groups.add(constituent_to_hyper[node.id])
                else:
                    singletons += 1
            c = len(groups) + singletons
            if c:
                degrees.setdefault(len(batch), []).append(len(batch) / c)
    return {n: sum(vals) / len(vals) for n, vals in sorted(degrees.items())}


# -- report re-rendering ----------------------------------------------------


def report_from_traces(
    traces_dir: str | Path,
    problems: Sequence[Problem],
    method: str = "replay",
    difficulty: DifficultyIndex | None = None,
) -> RunReport:
    """Rebuild a report from persisted traces (timings unavailable)."""
    traces = load_trace_dir(traces_dir)
    by_id = {p.id: p for p in problems}
    rows = []
    seed = 0
    chash = ""
    for pid in sorted(traces):
        trace = traces[pid]
        problem = by_id.get(pid)
        seed = int(trace.meta.get("seed", 0))
        chash = str(trace.meta.get("config_hash", ""))
        predicted = trace.result.get("predicted_answer")
        rows.append(
            ReportRow(
                problem_id=pid,
                predicted=predicted,
                correct=(
                    answers_match(predicted, problem.reference_answer) if problem else None
                ),
                tokens=int(trace.result.get("generated_tokens", trace.total_tokens())),
                wall_time_ms=None,
                level=difficulty.level(pid) if difficulty else None,
                trace_file=f"{pid}.json",
            )
        )
    return RunReport(method=method, seed=seed, config_hash=chash, rows=rows)
