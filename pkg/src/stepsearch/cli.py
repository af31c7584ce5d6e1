"""Command-line interface.

Subcommands: search, difficulty, label-pairs, value-labels, analyze,
compare, report, make-suite. Run configuration can come from a JSON
key-value file (``--config``) with flags overriding individual keys;
secrets (API tokens) are only ever read from environment variables named
in the backend config.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

from .backends.http import HttpBackendConfig
from .backends.synthetic import (
    SyntheticPolicy,
    SyntheticSuite,
    make_alias_fanout_spec,
    make_chain_spec,
    make_noisy_ladder_spec,
)
from .clustering import ClusterConfig
from .core import RngStream, canonical_json, load_problems
from .harness import (
    DifficultyIndex,
    RunConfig,
    RunReport,
    build_difficulty_index,
    compare_runs,
    report_from_traces,
    run_experiment,
    similarity_degree_by_batch_size,
    synthetic_verifiers,
    write_comparison_csv,
)
from .merging import MergeOptions
from .search import SearchConfig
from .simpairs import (
    ConsistencyConfig,
    label_pairs_consistency,
    write_pairs,
)
from .trace import load_trace_dir
from .valuation import (
    DEFAULT_LAMBDA,
    build_trajectory_record,
    export_value_labels,
    write_value_labels,
)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(obj, dict):
        raise SystemExit("config file must hold a JSON object")
    return obj


def _search_config(cfg: dict, args: argparse.Namespace) -> SearchConfig:
    merge_cfg = cfg.get("merge", {})
    if args.merge is not None:
        merge_cfg = dict(merge_cfg, enabled=args.merge)
    cluster_keys = {f.name for f in fields(ClusterConfig)}
    cluster = ClusterConfig(**{k: v for k, v in merge_cfg.items() if k in cluster_keys})
    merge_keys = {f.name for f in fields(MergeOptions)} - {"cluster"}
    merge = MergeOptions(
        cluster=cluster, **{k: v for k, v in merge_cfg.items() if k in merge_keys}
    )
    search_cfg = dict(cfg.get("search", {}))
    if args.algorithm and args.algorithm in ("bfs", "beam", "tree", "mcts"):
        search_cfg["algorithm"] = args.algorithm
    if args.expansion is not None:
        search_cfg["expansion_size"] = args.expansion
    known = {f.name for f in fields(SearchConfig)} - {"merge", "seed"}
    return SearchConfig(
        merge=merge,
        seed=args.seed if args.seed is not None else cfg.get("seed", 0),
        **{k: v for k, v in search_cfg.items() if k in known},
    )


def _http_config(cfg: dict | None) -> HttpBackendConfig | None:
    if not cfg:
        return None
    keys = {f.name for f in fields(HttpBackendConfig)}
    return HttpBackendConfig(**{k: v for k, v in cfg.items() if k in keys})


def _cmd_search(args: argparse.Namespace) -> int:
    cfg = _load_config_file(args.config)
    method = args.method or cfg.get("method")
    if not method:
        raise SystemExit("--method is required (or 'method' in the config file)")
    run = RunConfig(
        method=method,
        out_dir=Path(args.out or cfg.get("out_dir", "runs/out")),
        seed=args.seed if args.seed is not None else cfg.get("seed", 0),
        suite_path=Path(args.suite) if args.suite else _opt_path(cfg.get("suite")),
        dataset_path=Path(args.dataset) if args.dataset else _opt_path(cfg.get("dataset")),
        http_policy=_http_config(cfg.get("http_policy")),
        http_embedder=_http_config(cfg.get("http_embedder")),
        verifier=args.verifier or cfg.get("verifier", "oracle"),
        verifier_sigma=(
            args.sigma if args.sigma is not None else cfg.get("verifier_sigma", 0.1)
        ),
        ensemble_size=(
            args.ensemble if args.ensemble is not None else cfg.get("ensemble_size", 1)
        ),
        search=_search_config(cfg, args),
        sample_n=args.sample_n if args.sample_n is not None else cfg.get("sample_n", 10),
        workers=args.workers if args.workers is not None else cfg.get("workers", 1),
        difficulty_path=(
            Path(args.difficulty) if args.difficulty else _opt_path(cfg.get("difficulty"))
        ),
    )
    report = run_experiment(run)
    acc = "n/a" if report.accuracy is None else f"{report.accuracy:.3f}"
    print(f"method={report.method} problems={len(report.rows)} "
          f"accuracy={acc} mean_tokens_k={report.mean_tokens_k:.3f}")
    print(f"report written to {run.out_dir}/report.json")
    return 0


def _opt_path(value) -> Path | None:
    return Path(value) if value else None


def _cmd_difficulty(args: argparse.Namespace) -> int:
    if args.suite:
        suite = SyntheticSuite.load(args.suite)
        problems, policy = suite.problems(), SyntheticPolicy(suite)
    else:
        raise SystemExit("difficulty indexing currently needs --suite (scripted rollouts)")
    index = build_difficulty_index(
        problems, policy, rollouts=args.rollouts, seed=args.seed, max_depth=args.max_depth
    )
    index.save(args.out)
    counts: dict[int, int] = {}
    for e in index.entries.values():
        counts[e.level] = counts.get(e.level, 0) + 1
    print(f"indexed {len(index.entries)} problems: " +
          ", ".join(f"level {k}: {v}" for k, v in sorted(counts.items())))
    return 0


def _cmd_label_pairs(args: argparse.Namespace) -> int:
    traces = list(load_trace_dir(args.traces).values())
    if args.method == "prompting":
        if not args.judge_url or not args.judge_model:
            raise SystemExit("prompting-based labeling needs --judge-url and --judge-model")
        from .backends.http import HttpCompleter
        from .simpairs import label_pairs_prompting

        judge = HttpCompleter(
            HttpBackendConfig(
                base_url=args.judge_url, model=args.judge_model, auth_env=args.judge_auth_env
            )
        )
        pairs = label_pairs_prompting(traces, judge, max_pairs=args.max_pairs)
        meta = {"method": "prompting", "judge_model": args.judge_model}
    else:
        if not args.suite:
            raise SystemExit("consistency labeling needs --suite for the scripted policy")
        suite = SyntheticSuite.load(args.suite)
        policy = SyntheticPolicy(suite)
        config = ConsistencyConfig(
            alpha=args.alpha,
            beta=args.beta,
            rollouts=args.k,
            probability_mode=args.mode,
        )
        pairs = label_pairs_consistency(
            traces, policy, RngStream(args.seed, 0), config, max_pairs=args.max_pairs
        )
        meta = {
            "method": "consistency",
            "alpha": config.alpha,
            "beta": config.beta,
            "k": config.rollouts,
            "probability_mode": config.probability_mode,
        }
    written, discarded = write_pairs(pairs, args.out, keep_discarded=args.keep_discarded)
    meta.update({"written": written, "discarded": discarded})
    Path(str(args.out) + ".meta.json").write_text(canonical_json(meta) + "\n", "utf-8")
    print(f"wrote {written} pairs ({discarded} discarded) to {args.out}")
    return 0


def _cmd_value_labels(args: argparse.Namespace) -> int:
    suite = SyntheticSuite.load(args.suite)
    policy = SyntheticPolicy(suite)
    verifiers = synthetic_verifiers(suite, args.verifier, args.sigma, 1, args.seed)
    rng = RngStream(args.seed, 0)
    records = []
    for problem in suite.problems():
        for t in range(args.trajectories):
            records.append(
                build_trajectory_record(
                    policy,
                    problem,
                    rng.child("labels", problem.id, t),
                    rollouts_per_state=args.rho,
                    max_depth=args.max_depth,
                )
            )
    labels = export_value_labels(
        records, method=args.method, lam=args.lam, verifier=verifiers[0]
    )
    count = write_value_labels(labels, args.out)
    meta = {
        "method": args.method,
        "lambda": args.lam if args.method == "td_lambda" else None,
        "rollouts_per_state": args.rho,
        "verifier_identity": verifiers[0].identity,
        "labels": count,
    }
    Path(str(args.out) + ".meta.json").write_text(canonical_json(meta) + "\n", "utf-8")
    print(f"wrote {count} value labels to {args.out}")
    return 0


def _write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _cmd_analyze(args: argparse.Namespace) -> int:
    if args.kind == "similarity-degree":
        traces = list(load_trace_dir(args.traces).values())
        table = similarity_degree_by_batch_size(traces)
        _write_csv(args.out, ["batch_size", "mean_similarity_degree"],
                   [[n, f"{v:.6f}"] for n, v in table.items()])
    elif args.kind == "score-std":
        from .valuation import score_std_by_difficulty

        obj = json.loads(Path(args.scores).read_text(encoding="utf-8"))
        table = score_std_by_difficulty(obj["scores"], {k: int(v) for k, v in obj["levels"].items()})
        _write_csv(args.out, ["level", "mean_score_std"],
                   [[k, f"{v:.6f}"] for k, v in table.items()])
    else:  # brier
        from .valuation import brier_by_step

        triples = []
        with open(args.predictions, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    triples.append((int(obj["step"]), float(obj["pred"]), int(obj["outcome"])))
        table = brier_by_step(triples)
        _write_csv(args.out, ["step", "brier"], [[k, f"{v:.6f}"] for k, v in table.items()])
    print(f"wrote {args.out}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    comparison = compare_runs(RunReport.load(args.a), RunReport.load(args.b))
    write_comparison_csv(comparison, args.out)
    da = "n/a" if comparison.delta_accuracy is None else f"{comparison.delta_accuracy:+.3f}"
    tr = "n/a" if comparison.token_ratio is None else f"{comparison.token_ratio:.3f}"
    print(f"delta_accuracy={da} token_ratio={tr}; detail in {args.out}")
    for note in comparison.notes:
        print(f"note: {note}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    if args.suite:
        problems = SyntheticSuite.load(args.suite).problems()
    elif args.dataset:
        problems = load_problems(args.dataset)
    else:
        problems = []
    difficulty = DifficultyIndex.load(args.difficulty) if args.difficulty else None
    report = report_from_traces(args.traces, problems, difficulty=difficulty)
    json_path, csv_path = report.save(args.out)
    print(f"re-rendered {len(report.rows)} rows to {json_path} and {csv_path}")
    return 0


def _cmd_make_suite(args: argparse.Namespace) -> int:
    specs = []
    for i in range(args.problems):
        if args.family == "chain":
            specs.append(make_chain_spec(i, depth=args.depth))
        elif args.family == "alias-fanout":
            specs.append(
                make_alias_fanout_spec(i, depth=args.depth, alias_rate=args.alias_rate)
            )
        else:
            specs.append(make_noisy_ladder_spec(i))
    suite = SyntheticSuite(specs)
    suite.save(args.out)
    print(f"wrote {len(specs)} {args.family} problems to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepsearch",
        description="Verifier-guided tree search over reasoning steps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run one method over a dataset or suite")
    p.add_argument("--config", help="JSON key-value run configuration")
    p.add_argument("--method", help="greedy|self_consistency|best_of_n|weighted|bfs|beam|tree|mcts")
    p.add_argument("--algorithm", help="alias for tree-search method names")
    p.add_argument("--suite", help="synthetic suite JSON")
    p.add_argument("--dataset", help="problems JSONL (id/question/answer)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--verifier", choices=["oracle", "noisy"])
    p.add_argument("--sigma", type=float)
    p.add_argument("--ensemble", type=int, help="verifier ensemble size")
    p.add_argument("--expansion", type=int, help="expansion size N")
    p.add_argument("--merge", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--sample-n", dest="sample_n", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--difficulty", help="difficulty index JSON")
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("difficulty", help="build a per-problem difficulty index")
    p.add_argument("--suite", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rollouts", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=12)
    p.set_defaults(func=_cmd_difficulty)

    p = sub.add_parser("label-pairs", help="mine and label step pairs from traces")
    p.add_argument("--traces", required=True, help="directory of trace JSON files")
    p.add_argument("--suite", help="synthetic suite (consistency labeling)")
    p.add_argument("--method", choices=["consistency", "prompting"], default="consistency")
    p.add_argument("--judge-url", dest="judge_url", help="judge endpoint (prompting)")
    p.add_argument("--judge-model", dest="judge_model", help="judge model (prompting)")
    p.add_argument("--judge-auth-env", dest="judge_auth_env", default=None)
    p.add_argument("--alpha", type=float, default=0.02)
    p.add_argument("--beta", type=float, default=0.08)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--mode", choices=["raw", "length_normalized"], default="raw")
    p.add_argument("--max-pairs", dest="max_pairs", type=int, default=None)
    p.add_argument("--keep-discarded", dest="keep_discarded", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_label_pairs)

    p = sub.add_parser("value-labels", help="export verifier training targets")
    p.add_argument("--suite", required=True)
    p.add_argument("--method", choices=["mc", "td_lambda"], default="td_lambda")
    p.add_argument("--lambda", dest="lam", type=float, default=DEFAULT_LAMBDA)
    p.add_argument("--rho", type=int, default=16, help="rollouts per state")
    p.add_argument("--trajectories", type=int, default=1, help="trajectories per problem")
    p.add_argument("--verifier", choices=["oracle", "noisy"], default="oracle")
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--max-depth", dest="max_depth", type=int, default=12)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_value_labels)

    p = sub.add_parser("analyze", help="variance/Brier/similarity-degree analytics")
    p.add_argument("--kind", choices=["similarity-degree", "score-std", "brier"], required=True)
    p.add_argument("--traces", help="trace directory (similarity-degree)")
    p.add_argument("--scores", help="JSON with per-problem scores and levels (score-std)")
    p.add_argument("--predictions", help="JSONL with step/pred/outcome (brier)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("compare", help="paired comparison of two reports")
    p.add_argument("--a", required=True, help="baseline report.json")
    p.add_argument("--b", required=True, help="treatment report.json")
    p.add_argument("--out", required=True, help="comparison CSV")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("report", help="re-render a report from saved traces")
    p.add_argument("--traces", required=True)
    p.add_argument("--suite")
    p.add_argument("--dataset")
    p.add_argument("--difficulty")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("make-suite", help="materialize a built-in synthetic family")
    p.add_argument("--family", choices=["chain", "alias-fanout", "noisy-ladder"], required=True)
    p.add_argument("--problems", type=int, default=20)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--alias-rate", dest="alias_rate", type=float, default=0.5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_make_suite)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
