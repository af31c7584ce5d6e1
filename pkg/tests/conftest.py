"""Shared fixtures: scripted suites and backend bundles."""

from __future__ import annotations

import numpy as np
import pytest

from stepsearch.backends.synthetic import (
    AliasEmbedder,
    NoisyOracleVerifier,
    OracleVerifier,
    SyntheticPolicy,
    SyntheticSuite,
    make_alias_fanout_spec,
    make_chain_spec,
    make_noisy_ladder_spec,
)
from stepsearch.search import SearchBackends


@pytest.fixture(scope="session")
def chain_suite() -> SyntheticSuite:
    return SyntheticSuite([make_chain_spec(i, depth=3, aliases_per_step=2) for i in range(4)])


@pytest.fixture(scope="session")
def fanout_suite() -> SyntheticSuite:
    return SyntheticSuite([make_alias_fanout_spec(i, depth=3) for i in range(4)])


@pytest.fixture(scope="session")
def ladder_suite() -> SyntheticSuite:
    return SyntheticSuite(
        [make_noisy_ladder_spec(i, continue_probs=(0.7, 0.6, 0.5)) for i in range(4)]
    )


@pytest.fixture()
def oracle_backends(chain_suite) -> SearchBackends:
    return SearchBackends(
        policy=SyntheticPolicy(chain_suite),
        verifiers=[OracleVerifier(chain_suite)],
        embedder=AliasEmbedder(chain_suite),
    )


@pytest.fixture()
def fanout_backends(fanout_suite) -> SearchBackends:
    return SearchBackends(
        policy=SyntheticPolicy(fanout_suite),
        verifiers=[NoisyOracleVerifier(fanout_suite, sigma=0.1, seed=11)],
        embedder=AliasEmbedder(fanout_suite),
    )


def random_unit_vectors(rng: np.random.Generator, n: int, dim: int) -> list[np.ndarray]:
    vectors = []
    while len(vectors) < n:
        v = rng.normal(size=dim)
        norm = np.linalg.norm(v)
        if norm > 1e-9:
            vectors.append(v / norm)
    return vectors
