"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. Everything runs on the scripted backends; no network is touched.
"""

import math
import time

import numpy as np

from conftest import random_unit_vectors
from stepsearch.backends.synthetic import (
    AliasEmbedder,
    NoisyOracleVerifier,
    OracleVerifier,
    SyntheticPolicy,
    SyntheticSuite,
    make_alias_fanout_spec,
    make_noisy_ladder_spec,
)
from stepsearch.clustering import ClusterConfig, agglomerative_cluster, similarity_degree
from stepsearch.core import ReasoningState, RngStream, answers_match
from stepsearch.merging import MergeOptions
from stepsearch.search import (
    SearchBackends,
    SearchConfig,
    aggregate_answers,
    beam_search,
    bfs_search,
    dynamic_expansion_budget,
    greedy_decode,
    mcts_search,
    sample_solutions,
    tree_search,
)
from stepsearch.simpairs import bce_objective, edit_distance_similarity, pearson_correlation
from stepsearch.valuation import (
    TrajectoryRecord,
    brier_by_step,
    ensemble_score,
    lambda_return,
    mc_return,
)
from test_clustering import reference_agglomerative


def check(criterion: str, passed: bool, detail: str = "") -> None:
    tail = f" ({detail})" if detail else ""
    print(f"{'PASS' if passed else 'FAIL'}  {criterion}{tail}")
    assert passed, f"{criterion}{tail}"


def record_of(values, returns) -> TrajectoryRecord:
    from stepsearch.core import Step

    states = [ReasoningState.root("p")]
    for k in range(1, len(returns)):
        states.append(states[-1].extended(Step(f"s{k}", 1)))
    return TrajectoryRecord(states=states, returns=returns, verifier_values=values)


def brute_force_lambda_return(values, g_i, i, t_total, lam):
    horizon = t_total - i - 1
    total = 0.0
    for t in range(1, horizon + 1):
        total += (1 - lam) * lam ** (t - 1) * values[i + t]
    return total + lam**horizon * g_i


def random_lambda_instances(n: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(n):
        t_total = int(rng.integers(1, 11))
        lam = float(rng.uniform(0.0, 1.0))
        values = [float(rng.uniform(0, 1)) for _ in range(t_total - 1)]
        returns = [float(rng.uniform(0, 1)) for _ in range(t_total)]
        i = int(rng.integers(0, t_total))
        yield record_of(values, returns), values, returns, i, lam, t_total


def test_criterion_01_lambda_return_exactness():
    started = time.perf_counter()
    worst = 0.0
    for record, values, returns, i, lam, t_total in random_lambda_instances(1000, 42):
        got = lambda_return(record, i, lam)
        expected = brute_force_lambda_return([None] + values, returns[i], i, t_total, lam)
        worst = max(worst, abs(got - expected))
        assert lambda_return(record, i, 1.0) == returns[i]
        assert lambda_return(record, t_total - 1, lam) == returns[t_total - 1]
    elapsed = time.perf_counter() - started
    check(
        "criterion 1: lambda-return matches brute force on 1000 instances",
        worst <= 1e-12 and elapsed < 1.0,
        f"max |diff|={worst:.2e}, runtime={elapsed:.2f}s",
    )


def test_criterion_02_lambda_return_convexity():
    worst_weight = 0.0
    inside = True
    for record, values, returns, i, lam, t_total in random_lambda_instances(1000, 43):
        horizon = t_total - i - 1
        weights = [(1 - lam) * lam ** (t - 1) for t in range(1, horizon + 1)]
        weights.append(lam**horizon)
        worst_weight = max(worst_weight, abs(math.fsum(weights) - 1.0))
        got = lambda_return(record, i, lam)
        inputs = values[i:] + [returns[i]]
        inside = inside and (min(inputs) - 1e-12 <= got <= max(inputs) + 1e-12)
    check(
        "criterion 2: lambda-return weights sum to 1 and output is convex",
        worst_weight <= 1e-12 and inside,
        f"max |weight sum - 1|={worst_weight:.2e}",
    )


def test_criterion_03_clustering_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(2024)
    linkages = ("average", "complete", "single")
    mismatches = 0
    monotone = True
    grid = (0.05, 0.15, 0.3, 0.6, 1.0, 1.6)
    for trial in range(500):
        n = int(rng.integers(2, 13))
        dim = int(rng.integers(2, 6))
        vectors = random_unit_vectors(rng, n, dim)
        threshold = float(rng.uniform(0.02, 1.6))
        linkage = linkages[trial % 3]
        config = ClusterConfig(distance_threshold=threshold, linkage=linkage)
        got = agglomerative_cluster(vectors, config).assignments
        expected = reference_agglomerative(vectors, threshold, linkage)
        mismatches += got != expected
        counts = [
            agglomerative_cluster(
                vectors, ClusterConfig(distance_threshold=d, linkage=linkage)
            ).n_clusters
            for d in grid
        ]
        monotone = monotone and counts == sorted(counts, reverse=True)
    elapsed = time.perf_counter() - started
    check(
        "criterion 3: agglomerative matches the O(N^3) reference and is monotone in d",
        mismatches == 0 and monotone and elapsed < 5.0,
        f"mismatches={mismatches}, runtime={elapsed:.2f}s",
    )


def _fanout_suite(n_problems: int, depth: int = 6) -> SyntheticSuite:
    return SyntheticSuite(
        [make_alias_fanout_spec(i, depth=depth, alias_rate=0.5) for i in range(n_problems)]
    )


def test_criterion_04_merging_conservation():
    suite = _fanout_suite(5, depth=3)
    policy = SyntheticPolicy(suite)
    embedder = AliasEmbedder(suite)
    problems = suite.problems()
    drops = duplicates = 0
    for seed in range(200):
        problem = problems[seed % len(problems)]
        backends = SearchBackends(
            policy, [NoisyOracleVerifier(suite, 0.1, seed=300 + seed)], embedder
        )
        cfg = SearchConfig(seed=seed, merge=MergeOptions(enabled=True))
        trace = bfs_search(problem, cfg, backends).trace
        merged = [nid for h in trace.hyper_nodes for nid in h.constituents]
        expanded_children = {
            n.id for n in trace.nodes if n.expansion is not None and n.status != "terminal"
        }
        duplicates += len(merged) != len(set(merged))
        drops += set(merged) != expanded_children
    check(
        "criterion 4: every expanded child lands in exactly one hyper-node (200 runs)",
        drops == 0 and duplicates == 0,
        f"drops={drops}, duplicates={duplicates}",
    )


def test_criterion_05_merging_saves_tokens_at_parity():
    started = time.perf_counter()
    suite = _fanout_suite(50)
    policy = SyntheticPolicy(suite)
    embedder = AliasEmbedder(suite)
    tokens_plain = tokens_merged = correct_plain = correct_merged = 0
    for idx, problem in enumerate(suite.problems()):
        verifier = NoisyOracleVerifier(suite, 0.1, seed=7000 + idx)
        backends = SearchBackends(policy, [verifier], embedder)
        plain = bfs_search(
            problem, SearchConfig(seed=idx, max_total_expansions=100), backends
        )
        merged = bfs_search(
            problem,
            SearchConfig(seed=idx, max_total_expansions=100, merge=MergeOptions(enabled=True)),
            backends,
        )
        tokens_plain += plain.generated_tokens
        tokens_merged += merged.generated_tokens
        correct_plain += bool(answers_match(plain.predicted_answer, problem.reference_answer))
        correct_merged += bool(
            answers_match(merged.predicted_answer, problem.reference_answer)
        )
    elapsed = time.perf_counter() - started
    ratio = tokens_merged / tokens_plain
    accuracy_gap = abs(correct_merged - correct_plain) / 50
    check(
        "criterion 5: merging cuts tokens >= 30% at matched accuracy (50 problems)",
        ratio <= 0.70 and accuracy_gap <= 0.02 and elapsed < 60.0,
        f"token ratio={ratio:.3f}, |delta acc|={accuracy_gap:.3f}, runtime={elapsed:.1f}s",
    )


def test_criterion_06_td_lambda_variance_reduction():
    spec = make_noisy_ladder_spec(0, continue_probs=(0.7, 0.6, 0.5, 0.65))
    suite = SyntheticSuite([spec])
    policy = SyntheticPolicy(suite)
    verifier = NoisyOracleVerifier(suite, 0.05, seed=9)
    rng = np.random.default_rng(314)
    t_total = 4
    states = [ReasoningState.root(spec.problem_id)]
    for k in range(1, t_total):
        step = policy.generate(states[-1], 1, 0.0, 1.0, RngStream(0, k))[0]
        states.append(states[-1].extended(step))
    values = [verifier.score(s) for s in states[1:]]
    oracle = [spec.node_value(f"r{k}") for k in range(t_total)]
    mc_targets = {i: [] for i in range(t_total)}
    td_targets = {i: [] for i in range(t_total)}
    for _ in range(100):
        returns = [mc_return(list(rng.random(16) < oracle[i])) for i in range(t_total)]
        record = TrajectoryRecord(
            states=list(states), returns=returns, verifier_values=list(values)
        )
        for i in range(t_total):
            mc_targets[i].append(min(returns[i], 1.0))
            td_targets[i].append(min(lambda_return(record, i, 0.8), 1.0))
    strict = all(
        np.var(td_targets[i]) < np.var(mc_targets[i]) for i in range(t_total - 1)
    )
    detail = ", ".join(
        f"step {i}: {np.var(td_targets[i]):.5f} < {np.var(mc_targets[i]):.5f}"
        for i in range(t_total - 1)
    )
    check(
        "criterion 6: TD(0.8) label variance strictly below MC at every non-final step",
        strict,
        detail,
    )


def test_criterion_07_ensemble_variance_scaling():
    suite = SyntheticSuite([make_noisy_ladder_spec(0, continue_probs=(0.7, 0.6, 0.5))])
    state = ReasoningState.root("ladder-000")
    sigma = 0.08
    ok = True
    details = []
    for k in (2, 4):
        meta = RngStream(777, k)
        scores = []
        for trial in range(1000):
            members = [
                NoisyOracleVerifier(suite, sigma, seed=meta.integers(0, 2**31))
                for _ in range(k)
            ]
            scores.append(ensemble_score([m.score(state) for m in members]))
        std = float(np.std(scores, ddof=1))
        target = sigma / math.sqrt(k)
        ok = ok and abs(std - target) <= 0.2 * target
        details.append(f"k={k}: std={std:.4f} vs {target:.4f}")
    check(
        "criterion 7: k-member ensemble std within 20% of sigma/sqrt(k)",
        ok,
        "; ".join(details),
    )


def test_criterion_08_similarity_degree_trend():
    suite = _fanout_suite(1, depth=3)
    spec = suite[sorted(suite.specs)[0]]
    policy = SyntheticPolicy(suite)
    embedder = AliasEmbedder(suite)
    rng = RngStream(2718, 0)
    root = ReasoningState.root(spec.problem_id)
    means = []
    for n in (2, 3, 5, 10):
        degrees = []
        for _ in range(1000):
            steps = policy.generate(root, n, 0.8, 1.0, rng)
            partition = agglomerative_cluster(
                [embedder.embed(s.text) for s in steps], ClusterConfig()
            )
            degrees.append(similarity_degree(n, partition))
        means.append(sum(degrees) / len(degrees))
    non_decreasing = all(a <= b + 1e-12 for a, b in zip(means, means[1:]))
    check(
        "criterion 8: similarity degree non-decreasing over N in {2,3,5,10}",
        non_decreasing,
        "means=" + ", ".join(f"{m:.3f}" for m in means),
    )


def test_criterion_09_determinism_and_trace_integrity():
    suite = _fanout_suite(2, depth=4)
    problem = suite.problems()[0]
    algorithms = {
        "bfs": bfs_search,
        "beam": beam_search,
        "tree": tree_search,
        "mcts": mcts_search,
    }
    ok = True
    details = []
    for name, fn in algorithms.items():
        cfg = SearchConfig(
            algorithm=name,
            seed=99,
            merge=MergeOptions(enabled=True),
            max_total_expansions=15,
        )
        traces = []
        resum_ok = True
        for _ in range(2):
            backends = SearchBackends(
                SyntheticPolicy(suite),
                [
                    NoisyOracleVerifier(suite, 0.1, seed=1),
                    NoisyOracleVerifier(suite, 0.1, seed=2),
                ],
                AliasEmbedder(suite),
            )
            result = fn(problem, cfg, backends)
            traces.append(result.trace.to_json_bytes())
            resum_ok = resum_ok and result.generated_tokens == result.trace.total_tokens()
        identical = traces[0] == traces[1]
        ok = ok and identical and resum_ok
        details.append(f"{name}: identical={identical}, meter==resum={resum_ok}")
    check(
        "criterion 9: same-seed runs byte-identical; meters equal trace re-sums",
        ok,
        "; ".join(details),
    )


def test_criterion_10_dynamic_budget_law():
    n = 10
    budgets = [dynamic_expansion_budget(v / 200, 0.95, n) for v in range(0, 201)]
    in_range = all(1 <= b <= n for b in budgets)
    non_increasing = all(a >= b for a, b in zip(budgets, budgets[1:]))
    hand_values = (
        dynamic_expansion_budget(0.95, 0.95, 10) == 1
        and dynamic_expansion_budget(0.5, 0.95, 10) == 5
    )
    check(
        "criterion 10: dynamic budget in [1, N], non-increasing, matches hand values",
        in_range and non_increasing and hand_values,
        f"b(0.95)={dynamic_expansion_budget(0.95, 0.95, 10)}, "
        f"b(0.5)={dynamic_expansion_budget(0.5, 0.95, 10)}",
    )


def test_criterion_11_analytic_operations():
    tol = 1e-9
    cases = [
        abs(bce_objective(0.9, 1) - (-math.log(0.9))) <= tol,
        abs(bce_objective(0.5, 0) - (-math.log(0.5))) <= tol,
        abs(bce_objective(0.25, 1) - (-math.log(0.25))) <= tol,
        abs(edit_distance_similarity("same", "same") - 1.0) <= tol,
        abs(edit_distance_similarity("abc", "abd") - (1 - 1 / 3)) <= tol,
        abs(edit_distance_similarity("", "xyz") - 0.0) <= tol,
        abs(pearson_correlation([1, 2, 3, 4], [3, 5, 7, 9]) - 1.0) <= tol,
        abs(pearson_correlation([1, 2, 3], [-1, -2, -3]) - (-1.0)) <= tol,
        abs(pearson_correlation([1, 2, 3], [1, 3, 2]) - 0.5) <= tol,
    ]
    brier = brier_by_step([(0, 1.0, 1), (1, 0.7, 1), (2, 0.5, 1), (2, 0.5, 0)])
    cases += [
        abs(brier[0] - 0.0) <= tol,
        abs(brier[1] - 0.09) <= tol,
        abs(brier[2] - 0.25) <= tol,
    ]
    check(
        "criterion 11: analytic ops match closed forms to 1e-9",
        all(cases),
        f"{sum(cases)}/{len(cases)} cases",
    )


def test_criterion_12_baseline_accuracy_ordering():
    ladders = [
        (0.45, 0.8), (0.48, 0.9), (0.4, 0.95), (0.85, 0.45),
        (0.9, 0.47), (0.46, 0.85), (0.7, 0.8), (0.75, 0.65),
    ]
    suite = SyntheticSuite(
        [make_noisy_ladder_spec(i, continue_probs=p) for i, p in enumerate(ladders)]
    )
    policy = SyntheticPolicy(suite)
    scored = SearchBackends(policy, [OracleVerifier(suite)])
    unscored = SearchBackends(policy, ())
    hits = {"greedy": 0, "sc": 0, "bon": 0}
    total = 0
    for seed in range(100):
        for problem in suite.problems():
            cfg = SearchConfig(seed=seed)
            greedy = greedy_decode(problem, unscored, cfg)
            hits["greedy"] += bool(
                answers_match(greedy.predicted_answer, problem.reference_answer)
            )
            sc_samples = sample_solutions(problem, 10, cfg, unscored)
            hits["sc"] += bool(
                answers_match(
                    aggregate_answers(sc_samples, "majority"), problem.reference_answer
                )
            )
            bon_samples = sample_solutions(problem, 10, cfg, scored)
            hits["bon"] += bool(
                answers_match(
                    aggregate_answers(bon_samples, "best_of_n"), problem.reference_answer
                )
            )
            total += 1
    greedy_acc, sc_acc, bon_acc = (hits[k] / total for k in ("greedy", "sc", "bon"))
    check(
        "criterion 12: accuracy ordering greedy <= self-consistency <= best-of-N",
        greedy_acc <= sc_acc <= bon_acc,
        f"greedy={greedy_acc:.3f}, sc={sc_acc:.3f}, bon={bon_acc:.3f}",
    )
