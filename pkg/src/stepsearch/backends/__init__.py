"""Pluggable model backends: step generation, state scoring, embeddings."""

from .base import (
    Embedder,
    Policy,
    RolloutResult,
    SequenceProbabilityMode,
    Verifier,
    generate_steps,
    rollout,
    sequence_probability,
)
from .http import HttpBackendConfig, HttpEmbedder, HttpPolicy
from .synthetic import (
    AliasEmbedder,
    EdgeTemplate,
    NoisyOracleVerifier,
    OracleVerifier,
    SyntheticPolicy,
    SyntheticSuite,
    SyntheticTaskSpec,
    builtin_suite,
    make_alias_fanout_spec,
    make_chain_spec,
    make_noisy_ladder_spec,
    true_state_value,
)

__all__ = [
    "AliasEmbedder",
    "EdgeTemplate",
    "Embedder",
    "HttpBackendConfig",
    "HttpEmbedder",
    "HttpPolicy",
    "NoisyOracleVerifier",
    "OracleVerifier",
    "Policy",
    "RolloutResult",
    "SequenceProbabilityMode",
    "SyntheticPolicy",
    "SyntheticSuite",
    "SyntheticTaskSpec",
    "Verifier",
    "builtin_suite",
    "generate_steps",
    "make_alias_fanout_spec",
    "make_chain_spec",
    "make_noisy_ladder_spec",
    "rollout",
    "sequence_probability",
    "true_state_value",
]
