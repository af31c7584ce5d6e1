"""Contract tests for the OpenAI-compatible client against a local stub."""

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from stepsearch.backends.http import HttpBackendConfig, HttpEmbedder, HttpPolicy
from stepsearch.core import Problem, ReasoningState, RngStream, Step
from stepsearch.errors import BackendUnavailable, LogprobsUnsupported, MalformedResponse

PROBLEM = Problem("q1", "What is 3 + 4?", "7")


class _StubHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):  # silence request logging
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        server = self.server
        server.requests.append(
            {
                "path": self.path,
                "body": body,
                "auth": self.headers.get("Authorization"),
            }
        )
        if server.behaviors:
            status = server.behaviors.pop(0)
            if status != 200:
                self.send_response(status)
                self.end_headers()
                self.wfile.write(b"stub error")
                return
        payload = server.make_response(self.path, body)
        data = json.dumps(payload).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)


class _Stub:
    def __init__(self):
        self.server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self.server.requests = []
        self.server.behaviors = []
        self.server.make_response = self._default_response
        self.thread = threading.Thread(
            target=lambda: self.server.serve_forever(poll_interval=0.02), daemon=True
        )
        self.thread.start()

    @property
    def base_url(self) -> str:
        host, port = self.server.server_address
        return f"http://{host}:{port}"

    @property
    def requests(self):
        return self.server.requests

    def set_behaviors(self, statuses):
        self.server.behaviors = list(statuses)

    def set_response_maker(self, fn):
        self.server.make_response = fn

    def close(self):
        self.server.shutdown()
        self.server.server_close()

    @staticmethod
    def _default_response(path, body):
        if path == "/v1/completions":
            n = body.get("n", 1)
            return {
                "choices": [
                    {
                        "text": f"step {i}",
                        "logprobs": {
                            "tokens": ["step", f" {i}"],
                            "token_logprobs": [-0.25, -0.5],
                            "text_offset": [0, 4],
                        },
                    }
                    for i in range(n)
                ],
                "usage": {"completion_tokens": 2 * n},
            }
        return {"data": [{"embedding": [3.0, 4.0]}]}


@pytest.fixture()
def stub():
    server = _Stub()
    yield server
    server.close()


def config_for(stub, **kwargs) -> HttpBackendConfig:
    defaults = dict(
        base_url=stub.base_url, model="test-model", max_retries=2, retry_backoff=0.0,
        timeout=5.0,
    )
    defaults.update(kwargs)
    return HttpBackendConfig(**defaults)


class TestHttpPolicy:
    def test_generate_parses_choices(self, stub):
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        steps = policy.generate(ReasoningState.root("q1"), 3, 0.8, 0.95, RngStream(0))
        assert [s.text for s in steps] == ["step 0", "step 1", "step 2"]
        assert all(s.token_count == 2 for s in steps)
        assert all(s.logprob == pytest.approx(-0.75) for s in steps)

    def test_request_shape(self, stub):
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        policy.generate(ReasoningState.root("q1"), 2, 0.7, 0.9, RngStream(0))
        [request] = stub.requests
        assert request["path"] == "/v1/completions"
        body = request["body"]
        assert body["model"] == "test-model"
        assert body["n"] == 2
        assert body["temperature"] == 0.7
        assert body["top_p"] == 0.9
        assert body["stop"] == ["\n"]
        assert body["logprobs"] == 0
        assert body["prompt"].startswith("What is 3 + 4?")

    def test_auth_header_from_env(self, stub, monkeypatch):
        monkeypatch.setenv("STUB_TOKEN", "sekrit")
        policy = HttpPolicy(config_for(stub, auth_env="STUB_TOKEN"), [PROBLEM])
        policy.generate(ReasoningState.root("q1"), 1, 0.8, 1.0, RngStream(0))
        assert stub.requests[0]["auth"] == "Bearer sekrit"

    def test_retries_then_succeeds(self, stub):
        stub.set_behaviors([500, 200])
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        steps = policy.generate(ReasoningState.root("q1"), 1, 0.8, 1.0, RngStream(0))
        assert len(steps) == 1
        assert len(stub.requests) == 2

    def test_unavailable_after_retry_budget(self, stub):
        stub.set_behaviors([500, 500, 500])
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        with pytest.raises(BackendUnavailable):
            policy.generate(ReasoningState.root("q1"), 1, 0.8, 1.0, RngStream(0))
        assert len(stub.requests) == 3  # initial try + 2 retries

    def test_client_errors_do_not_retry(self, stub):
        stub.set_behaviors([401])
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        with pytest.raises(BackendUnavailable):
            policy.generate(ReasoningState.root("q1"), 1, 0.8, 1.0, RngStream(0))
        assert len(stub.requests) == 1

    def test_malformed_choice_count(self, stub):
        stub.set_response_maker(lambda path, body: {"choices": []})
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        with pytest.raises(MalformedResponse):
            policy.generate(ReasoningState.root("q1"), 2, 0.8, 1.0, RngStream(0))

    def test_score_continuation_sums_by_offset(self, stub):
        prefix = "What is 3 + 4?\n"

        def echo_response(path, body):
            assert body["echo"] is True and body["max_tokens"] == 0
            p = len(prefix)
            # Tokens: the whole prefix, then "3+4=7\n", then "The answer is 7\n"
            return {
                "choices": [
                    {
                        "text": body["prompt"],
                        "logprobs": {
                            "tokens": ["<prefix>", "3+4=7\n", "The answer", " is 7\n"],
                            "token_logprobs": [None, -0.25, -0.5, -0.125],
                            "text_offset": [0, p, p + 6, p + 16],
                        },
                    }
                ]
            }

        stub.set_response_maker(echo_response)
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        rollout_steps = [Step("3+4=7", 1), Step("The answer is 7", 2)]
        logprobs = policy.score_continuation(ReasoningState.root("q1"), rollout_steps)
        assert logprobs == [pytest.approx(-0.25), pytest.approx(-0.625)]

    def test_score_continuation_without_logprobs(self, stub):
        stub.set_response_maker(lambda path, body: {"choices": [{"text": "x"}]})
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        with pytest.raises(LogprobsUnsupported):
            policy.score_continuation(ReasoningState.root("q1"), [Step("s", 1)])

    def test_unknown_problem_id(self, stub):
        policy = HttpPolicy(config_for(stub), [PROBLEM])
        with pytest.raises(MalformedResponse):
            policy.generate(ReasoningState.root("nope"), 1, 0.8, 1.0, RngStream(0))


class TestHttpCompleter:
    def test_complete_returns_text(self, stub):
        from stepsearch.backends.http import HttpCompleter

        stub.set_response_maker(lambda path, body: {"choices": [{"text": "Yes."}]})
        judge = HttpCompleter(config_for(stub))
        assert judge.complete("are these the same?") == "Yes."
        body = stub.requests[0]["body"]
        assert body["temperature"] == 0.0 and body["n"] == 1

    def test_missing_text_rejected(self, stub):
        from stepsearch.backends.http import HttpCompleter

        stub.set_response_maker(lambda path, body: {"choices": []})
        with pytest.raises(MalformedResponse):
            HttpCompleter(config_for(stub)).complete("prompt")


class TestHttpEmbedder:
    def test_normalizes_vector(self, stub):
        embedder = HttpEmbedder(config_for(stub))
        vec = embedder.embed("hello")
        assert vec == pytest.approx(np.array([0.6, 0.8]))
        assert np.linalg.norm(vec) == pytest.approx(1.0)
        body = stub.requests[0]["body"]
        assert body == {"model": "test-model", "input": ["hello"]}

    def test_zero_vector_rejected(self, stub):
        stub.set_response_maker(lambda path, body: {"data": [{"embedding": [0.0, 0.0]}]})
        embedder = HttpEmbedder(config_for(stub))
        with pytest.raises(MalformedResponse):
            embedder.embed("hello")

    def test_missing_data_rejected(self, stub):
        stub.set_response_maker(lambda path, body: {"data": []})
        embedder = HttpEmbedder(config_for(stub))
        with pytest.raises(MalformedResponse):
            embedder.embed("hello")


class TestConfigValidation:
    def test_bad_timeout(self):
        with pytest.raises(ValueError):
            HttpBackendConfig(base_url="http://x", model="m", timeout=0)

    def test_bad_retries(self):
        with pytest.raises(ValueError):
            HttpBackendConfig(base_url="http://x", model="m", max_retries=-1)
