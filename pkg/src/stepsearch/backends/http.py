"""HTTP client for OpenAI-compatible completion and embedding services.

One reasoning step is one line of generated text: requests stop at the
first newline, so the step-per-line convention of math fine-tunes maps
directly onto completion calls. Token counts and per-step log-probs come
from the service's ``logprobs`` payload. Auth tokens are read from an
environment variable named in the config; nothing secret is stored.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import httpx
import numpy as np

from ..core import Problem, ReasoningState, RngStream, Step
from ..errors import BackendUnavailable, LogprobsUnsupported, MalformedResponse


@dataclass(frozen=True)
class HttpBackendConfig:
    """Connection settings for one OpenAI-compatible service."""

    base_url: str
    model: str
    auth_env: str | None = None  # env var holding the bearer token
    timeout: float = 30.0
    max_retries: int = 2
    temperature: float = 0.8
    top_p: float = 1.0
    max_step_tokens: int = 256
    retry_backoff: float = 0.25

    def __post_init__(self) -> None:
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


class _HttpClient:
    def __init__(self, config: HttpBackendConfig) -> None:
        self.config = config
        headers = {}
        if config.auth_env:
            token = os.environ.get(config.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=config.base_url.rstrip("/"),
            timeout=config.timeout,
            headers=headers,
        )

    def close(self) -> None:
        self._client.close()

    def post_json(self, path: str, payload: Mapping[str, Any]) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            try:
                response = self._client.post(path, json=dict(payload))
            except httpx.HTTPError as exc:
                last_error = exc
            else:
                if response.status_code == 200:
                    try:
                        return response.json()
                    except ValueError as exc:
                        raise MalformedResponse(f"{path}: non-JSON body") from exc
                if response.status_code < 500:
                    raise BackendUnavailable(
                        f"{path}: HTTP {response.status_code}: {response.text[:200]}"
                    )
                last_error = BackendUnavailable(
                    f"{path}: HTTP {response.status_code}"
                )
            if attempt < self.config.max_retries and self.config.retry_backoff > 0:
                time.sleep(self.config.retry_backoff * (2**attempt))
        raise BackendUnavailable(f"{path}: failed after {self.config.max_retries + 1} attempts: {last_error}")


class HttpPolicy:
    """Step generation over ``POST /v1/completions``.

    Needs the question text per problem, so construct it with the problem
    index of the run.
    """

    def __init__(
        self, config: HttpBackendConfig, problems: Mapping[str, Problem] | Sequence[Problem]
    ) -> None:
        self.config = config
        if not isinstance(problems, Mapping):
            problems = {p.id: p for p in problems}
        self.problems = dict(problems)
        self._client = _HttpClient(config)

    def close(self) -> None:
        self._client.close()

    def _prompt(self, state: ReasoningState) -> str:
        problem = self.problems.get(state.problem_id)
        if problem is None:
            raise MalformedResponse(f"unknown problem id {state.problem_id!r}")
        return state.render(problem.question) + "\n"

    def generate(
        self,
        state: ReasoningState,
        n: int,
        temperature: float,
        top_p: float,
        rng: RngStream,
    ) -> list[Step]:
        payload = {
            "model": self.config.model,
            "prompt": self._prompt(state),
            "n": n,
            "temperature": temperature,
            "top_p": top_p,
            "stop": ["\n"],
            "logprobs": 0,
            "max_tokens": self.config.max_step_tokens,
            "seed": rng.integers(0, 2**31 - 1),
        }
        body = self._client.post_json("/v1/completions", payload)
        choices = body.get("choices")
        if not isinstance(choices, list) or len(choices) != n:
            raise MalformedResponse(
                f"expected {n} choices, got {len(choices) if isinstance(choices, list) else type(choices)}"
            )
        steps = []
        for choice in choices:
            text = choice.get("text")
            if not isinstance(text, str):
                raise MalformedResponse("choice without text")
            lp_info = choice.get("logprobs") or {}
            token_lps = lp_info.get("token_logprobs")
            if token_lps:
                token_count = len(token_lps)
                logprob = min(0.0, math.fsum(lp for lp in token_lps if lp is not None))
            else:
                usage = body.get("usage") or {}
                token_count = int(usage.get("completion_tokens", 0)) // max(1, n)
                logprob = None
            steps.append(Step(text.strip("\n"), token_count, logprob))
        return steps

    def score_continuation(
        self, state: ReasoningState, rollout_steps: Sequence[Step]
    ) -> list[float]:
        """Score a fixed continuation via echoed prompt log-probs.

        Sends prompt+continuation with ``max_tokens=0, echo=true`` and
        sums token log-probs per step using the returned text offsets.
        """
        prefix = self._prompt(state)
        texts = [s.text + "\n" for s in rollout_steps]
        payload = {
            "model": self.config.model,
            "prompt": prefix + "".join(texts),
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        body = self._client.post_json("/v1/completions", payload)
        try:
            lp_info = body["choices"][0]["logprobs"]
            token_lps = lp_info["token_logprobs"]
            offsets = lp_info["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LogprobsUnsupported(
                "service did not return echoed token logprobs"
            ) from exc
        bounds = []
        start = len(prefix)
        for text in texts:
            bounds.append((start, start + len(text)))
            start += len(text)
        per_step = [0.0] * len(rollout_steps)
        for lp, off in zip(token_lps, offsets):
            if lp is None:
                continue
            for i, (lo, hi) in enumerate(bounds):
                if lo <= off < hi:
                    per_step[i] += lp
                    break
        return per_step


class HttpCompleter:
    """Plain text completion for judge prompts (pair labeling)."""

    def __init__(self, config: HttpBackendConfig, max_tokens: int = 8) -> None:
        self.config = config
        self.max_tokens = max_tokens
        self._client = _HttpClient(config)

    def close(self) -> None:
        self._client.close()

    def complete(self, prompt: str) -> str:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "n": 1,
            "temperature": 0.0,
            "max_tokens": self.max_tokens,
        }
        body = self._client.post_json("/v1/completions", payload)
        try:
            return str(body["choices"][0]["text"])
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("completion response missing choices[0].text") from exc


class HttpEmbedder:
    """Unit-norm embeddings over ``POST /v1/embeddings``."""

    def __init__(self, config: HttpBackendConfig) -> None:
        self.config = config
        self._client = _HttpClient(config)

    def close(self) -> None:
        self._client.close()

    def embed(self, text: str) -> np.ndarray:
        payload = {"model": self.config.model, "input": [text]}
        body = self._client.post_json("/v1/embeddings", payload)
        try:
            vec = np.asarray(body["data"][0]["embedding"], dtype=float)
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse("embedding response missing data[0].embedding") from exc
        if vec.ndim != 1 or vec.size == 0:
            raise MalformedResponse("embedding is not a flat non-empty vector")
        norm = float(np.linalg.norm(vec))
        if norm <= 0.0:
            raise MalformedResponse("embedding has zero norm")
        return vec / norm
