import json
import threading

import pytest

from labloop.errors import RateLimitError, ReplayMissError, TransportError
from labloop.llm import (
    BackendResponse,
    ChatTurn,
    CompletionRequest,
    LlmClient,
    ModelPrice,
    ReplayBackend,
    RetryPolicy,
    TranscriptWriter,
    UsageLedger,
    request_digest,
)

from conftest import ScriptedBackend


def make_request(content="hello", model="m1", temperature=0.5):
    return CompletionRequest(
        turns=(ChatTurn("user", content),), model_id=model, temperature=temperature
    )


class TestRequestValidation:
    def test_no_turns(self):
        with pytest.raises(ValueError, match="no turns"):
            CompletionRequest(turns=(), model_id="m", temperature=0.5)

    def test_must_end_with_user(self):
        with pytest.raises(ValueError, match="end with a user turn"):
            CompletionRequest(
                turns=(ChatTurn("user", "hi"), ChatTurn("assistant", "yo")),
                model_id="m",
                temperature=0.5,
            )

    def test_system_must_be_first_and_single(self):
        with pytest.raises(ValueError, match="system turn must come first"):
            CompletionRequest(
                turns=(ChatTurn("user", "hi"), ChatTurn("system", "sys"), ChatTurn("user", "x")),
                model_id="m",
                temperature=0.5,
            )
        with pytest.raises(ValueError, match="at most one system"):
            CompletionRequest(
                turns=(ChatTurn("system", "a"), ChatTurn("system", "b"), ChatTurn("user", "x")),
                model_id="m",
                temperature=0.5,
            )

    def test_temperature_range(self):
        with pytest.raises(ValueError, match="temperature"):
            make_request(temperature=2.5)

    def test_empty_user_content(self):
        with pytest.raises(ValueError, match="must have content"):
            ChatTurn("user", "")


class TestDigest:
    def test_digest_depends_on_content(self):
        a = request_digest(make_request("one"))
        b = request_digest(make_request("two"))
        assert a != b

    def test_digest_ignores_max_tokens(self):
        r1 = CompletionRequest((ChatTurn("user", "x"),), "m", 0.5, max_output_tokens=10)
        r2 = CompletionRequest((ChatTurn("user", "x"),), "m", 0.5, max_output_tokens=999)
        assert request_digest(r1) == request_digest(r2)

    def test_digest_depends_on_model_and_temperature(self):
        assert request_digest(make_request(model="a")) != request_digest(make_request(model="b"))
        assert request_digest(make_request(temperature=0.1)) != request_digest(
            make_request(temperature=0.2)
        )


class TestLedger:
    def test_two_calls_sum_completion_tokens(self):
        # fixture token counts 10 and 20 must add to 30
        ledger = UsageLedger()
        ledger.record("m", 5, 10)
        ledger.record("m", 7, 20)
        assert ledger.snapshot().completion_tokens == 30

    def test_cost_uses_price_table(self):
        ledger = UsageLedger({"m": ModelPrice(input_per_token=0.001, output_per_token=0.002)})
        delta = ledger.record("m", 100, 50)
        assert delta.estimated_cost == pytest.approx(0.1 + 0.1)
        assert ledger.snapshot().estimated_cost == pytest.approx(0.2)

    def test_additivity_over_many_calls(self):
        ledger = UsageLedger({"m": ModelPrice(0.01, 0.02)})
        deltas = [ledger.record("m", i, 2 * i) for i in range(20)]
        snap = ledger.snapshot()
        assert snap.prompt_tokens == sum(d.prompt_tokens for d in deltas)
        assert snap.completion_tokens == sum(d.completion_tokens for d in deltas)
        assert snap.estimated_cost == pytest.approx(sum(d.estimated_cost for d in deltas))

    def test_monotone_under_threads(self):
        ledger = UsageLedger()

        def work():
            for _ in range(200):
                ledger.record("m", 1, 1)

        threads = [threading.Thread(target=work) for _ in range(8)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert ledger.snapshot().prompt_tokens == 1600


class FlakyBackend:
    def __init__(self, failures, exc=TransportError("boom")):
        self.failures = failures
        self.exc = exc
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        if self.calls <= self.failures:
            raise self.exc
        return BackendResponse("ok", 1, 1)


class TestRetries:
    def test_retries_then_succeeds(self):
        backend = FlakyBackend(failures=2)
        client = LlmClient(backend, retry=RetryPolicy(max_attempts=3, sleeper=lambda s: None))
        text, _ = client.chat_complete(make_request())
        assert text == "ok"
        assert backend.calls == 3

    def test_bounded_attempts(self):
        backend = FlakyBackend(failures=99)
        client = LlmClient(backend, retry=RetryPolicy(max_attempts=4, sleeper=lambda s: None))
        with pytest.raises(TransportError):
            client.chat_complete(make_request())
        assert backend.calls == 4

    def test_rate_limit_is_retried(self):
        backend = FlakyBackend(failures=1, exc=RateLimitError("slow down"))
        client = LlmClient(backend, retry=RetryPolicy(max_attempts=2, sleeper=lambda s: None))
        text, _ = client.chat_complete(make_request())
        assert text == "ok"

    def test_replay_miss_not_retried(self):
        backend = ReplayBackend()
        client = LlmClient(backend, retry=RetryPolicy(max_attempts=5, sleeper=lambda s: None))
        with pytest.raises(ReplayMissError) as err:
            client.chat_complete(make_request())
        assert len(err.value.digest) == 64


class TestReplayAndTranscripts:
    def test_replay_returns_fixture_byte_identical(self):
        request = make_request("what is up")
        backend = ReplayBackend()
        backend.add(request_digest(request), BackendResponse("exacté bytes\n", 3, 4))
        client = LlmClient(backend)
        text, delta = client.chat_complete(request)
        assert text == "exacté bytes\n"
        assert (delta.prompt_tokens, delta.completion_tokens) == (3, 4)

    def test_record_then_replay_roundtrip(self, tmp_path):
        path = tmp_path / "session.jsonl"
        scripted = ScriptedBackend(queue=["first answer", "second answer"])
        recorder = LlmClient(scripted, transcript=TranscriptWriter(path))
        r1, r2 = make_request("q1"), make_request("q2")
        a1, _ = recorder.chat_complete(r1)
        a2, _ = recorder.chat_complete(r2)

        replayed = LlmClient(ReplayBackend.from_transcripts([path]))
        assert replayed.chat_complete(r1)[0] == a1
        assert replayed.chat_complete(r2)[0] == a2

    def test_transcript_is_appendonly_jsonl(self, tmp_path):
        path = tmp_path / "t.jsonl"
        writer = TranscriptWriter(path)
        client = LlmClient(ScriptedBackend(queue=["a"]), transcript=writer)
        client.chat_complete(make_request("only"))
        lines = path.read_text().strip().split("\n")
        assert len(lines) == 1
        record = json.loads(lines[0])
        assert {"digest", "response", "prompt_tokens", "completion_tokens"} <= record.keys()

    def test_concurrent_sessions_use_disjoint_files(self, tmp_path):
        w1 = TranscriptWriter(tmp_path / "s1.jsonl")
        w2 = TranscriptWriter(tmp_path / "s2.jsonl")
        c1 = LlmClient(ScriptedBackend(queue=["x"]), transcript=w1)
        c2 = LlmClient(ScriptedBackend(queue=["y"]), transcript=w2)
        c1.chat_complete(make_request("one"))
        c2.chat_complete(make_request("two"))
        assert len((tmp_path / "s1.jsonl").read_text().strip().split("\n")) == 1
        assert len((tmp_path / "s2.jsonl").read_text().strip().split("\n")) == 1

    def test_replay_determinism_across_two_replays(self, tmp_path):
        path = tmp_path / "session.jsonl"
        recorder = LlmClient(
            ScriptedBackend(queue=["alpha", "beta"]), transcript=TranscriptWriter(path)
        )
        reqs = [make_request("q1"), make_request("q2")]
        for r in reqs:
            recorder.chat_complete(r)
        texts1 = [LlmClient(ReplayBackend.from_transcripts([path])).chat_complete(r)[0] for r in reqs]
        texts2 = [LlmClient(ReplayBackend.from_transcripts([path])).chat_complete(r)[0] for r in reqs]
        assert texts1 == texts2
