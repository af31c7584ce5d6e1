import json
import threading

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stepsearch.core import (
    Problem,
    ReasoningState,
    RngStream,
    Step,
    TokenMeter,
    answers_match,
    detect_terminal,
    extract_answer,
    load_problems,
    normalize_answer,
    save_problems,
)
from stepsearch.errors import NotTerminal


def state_with(*texts: str) -> ReasoningState:
    state = ReasoningState.root("p0")
    for t in texts:
        state = state.extended(Step(t, token_count=len(t.split())))
    return state


class TestDetectTerminal:
    def test_marker_present(self):
        assert detect_terminal(state_with("3+4=7", "The answer is 42")) is True

    def test_empty_steps(self):
        assert detect_terminal(ReasoningState.root("p0")) is False

    def test_no_marker(self):
        assert detect_terminal(state_with("3+4=7")) is False

    def test_case_insensitive(self):
        assert detect_terminal(state_with("so THE ANSWER IS 3")) is True

    def test_marker_must_be_non_empty(self):
        with pytest.raises(ValueError):
            detect_terminal(state_with("x"), marker="")


class TestExtractAnswer:
    def test_strips_trailing_punctuation(self):
        assert extract_answer(state_with("... The answer is 7.")) == "7"

    def test_thousands_separator(self):
        assert extract_answer(state_with("The answer is 1,000")) == "1000"

    def test_decimal_canonicalization(self):
        assert extract_answer(state_with("The answer is 7.0")) == "7"
        assert extract_answer(state_with("The answer is 2.50")) == "2.5"

    def test_non_terminal_raises(self):
        with pytest.raises(NotTerminal):
            extract_answer(state_with("3+4=7"))

    def test_last_occurrence_wins(self):
        state = state_with("the answer is 3 but wait, The answer is 5")
        assert extract_answer(state) == "5"

    def test_non_numeric_answer(self):
        assert extract_answer(state_with("The answer is x+1.")) == "x+1"


class TestNormalizeAnswer:
    @pytest.mark.parametrize(
        "raw,expected",
        [
            (" 7 ", "7"),
            ("7.0", "7"),
            ("1,000", "1000"),
            ("-3.20", "-3.2"),
            ("0.0", "0"),
            ("hello!", "hello"),
            ("4/3", "4/3"),
        ],
    )
    def test_examples(self, raw, expected):
        assert normalize_answer(raw) == expected

    def test_answers_match(self):
        assert answers_match("7.0", "7") is True
        assert answers_match("8", "7") is False
        assert answers_match(None, "7") is False
        assert answers_match("7", None) is None


class TestRngStream:
    def test_same_pair_reproduces(self):
        a = [RngStream(9, 4).random() for _ in range(5)]
        b = [RngStream(9, 4).random() for _ in range(5)]
        assert a == b

    def test_distinct_streams_differ(self):
        a = [RngStream(9, 1).random() for _ in range(5)]
        b = [RngStream(9, 2).random() for _ in range(5)]
        assert a != b

    def test_child_streams_are_stable(self):
        assert RngStream(3).child("x", 1).random() == RngStream(3).child("x", 1).random()
        assert RngStream(3).child("x", 1).random() != RngStream(3).child("x", 2).random()

    @given(st.lists(st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=6))
    def test_choice_index_in_range(self, probs):
        rng = RngStream(1, 2)
        for _ in range(10):
            assert 0 <= rng.choice_index(probs) < len(probs)


class TestTokenMeter:
    def test_counts(self):
        meter = TokenMeter()
        meter.add(3)
        meter.add(4)
        assert meter.generated_tokens == 7

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            TokenMeter().add(-1)

    def test_thread_safety(self):
        meter = TokenMeter()

        def bump():
            for _ in range(1000):
                meter.add(1)

        threads = [threading.Thread(target=bump) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert meter.generated_tokens == 8000


class TestDatasets:
    def test_roundtrip(self, tmp_path):
        problems = [Problem("a", "q1", "1"), Problem("b", "q2", None)]
        path = tmp_path / "data.jsonl"
        save_problems(problems, path)
        loaded = load_problems(path)
        assert loaded == problems

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        path.write_text(
            json.dumps({"id": "a", "question": "q"}) + "\n" +
            json.dumps({"id": "a", "question": "q2"}) + "\n"
        )
        with pytest.raises(ValueError, match="duplicate"):
            load_problems(path)

    def test_missing_keys_rejected(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"question": "q"}) + "\n")
        with pytest.raises(ValueError, match="missing"):
            load_problems(path)

    def test_empty_question_rejected(self):
        with pytest.raises(ValueError):
            Problem("x", "")


class TestStateInvariants:
    def test_terminal_flag_tracks_marker(self):
        state = state_with("a step")
        assert not state.terminal
        state = state.extended(Step("The answer is 1", 4))
        assert state.terminal

    def test_step_validation(self):
        with pytest.raises(ValueError):
            Step("x", -1)
        with pytest.raises(ValueError):
            Step("x", 1, logprob=0.5)

    def test_render(self):
        state = state_with("one", "two")
        assert state.render("Q?") == "Q?\none\ntwo"
        assert state.render() == "one\ntwo"
