import json
import re

import pytest

from labloop.llm import (
    Backend,
    BackendResponse,
    CompletionRequest,
    Conversation,
    LlmClient,
    ModelSettings,
    UsageLedger,
)


class ScriptedBackend:
    """Backend that routes requests to canned responses.

    Two modes, usable together:

    - ``rules``: ordered (matcher, response) pairs; a matcher is a callable
      on the last user message (or a substring to look for).  Content-based
      routing keeps responses stable under reordering and concurrency.
    - ``queue``: FIFO responses consumed when no rule matches.

    Token counts are derived deterministically from the texts.
    """

    def __init__(self, rules=None, queue=None):
        self.rules = list(rules or [])
        self.queue = list(queue or [])
        self.requests: list[CompletionRequest] = []

    @property
    def calls(self) -> int:
        return len(self.requests)

    def add_rule(self, matcher, response):
        self.rules.append((matcher, response))

    def complete(self, request: CompletionRequest) -> BackendResponse:
        self.requests.append(request)
        last_user = next(t.content for t in reversed(request.turns) if t.role == "user")
        text = None
        for matcher, response in self.rules:
            if callable(matcher):
                hit = matcher(last_user)
            else:
                hit = matcher in last_user
            if hit:
                text = response(last_user, request) if callable(response) else response
                break
        if text is None:
            if not self.queue:
                raise AssertionError(
                    f"scripted backend has no response for: {last_user[:200]!r}"
                )
            text = self.queue.pop(0)
        return BackendResponse(
            text=text,
            prompt_tokens=sum(len(t.content) for t in request.turns) // 4,
            completion_tokens=len(text) // 4,
        )


def make_client(backend, prices=None) -> LlmClient:
    return LlmClient(backend, ledger=UsageLedger(prices))


def make_conversation(backend, system_prompt="", model_id="test-model", temperature=0.5):
    client = make_client(backend)
    return Conversation(client, ModelSettings(model_id, temperature), system_prompt)


def envelope_text(payload: dict, thought: str = "Thinking.", header: str = "RESPONSE:") -> str:
    return f"THOUGHT:\n{thought}\n\n{header}\n```json\n{json.dumps(payload, indent=1)}\n```\n"


def idea_payload(name="adaptive_lr_probe", title="Adaptive LR Probe", **overrides):
    payload = {
        "Name": name,
        "Title": title,
        "Experiment": "Modify the training loop to probe learning-rate sensitivity.",
        "Interestingness": 7,
        "Feasibility": 8,
        "Novelty": 6,
    }
    payload.update(overrides)
    return payload


def review_payload(overall=6, decision="Accept", **overrides):
    payload = {
        "Summary": "The paper studies a training modification on a toy task.",
        "Strengths": ["Clear experimental setup."],
        "Weaknesses": ["Limited scale of experiments."],
        "Originality": 3,
        "Quality": 2,
        "Clarity": 3,
        "Significance": 2,
        "Questions": ["How does the method scale?"],
        "Limitations": ["Toy datasets only."],
        "Ethical Concerns": False,
        "Soundness": 3,
        "Presentation": 3,
        "Contribution": 2,
        "Overall": overall,
        "Confidence": 4,
        "Decision": decision,
    }
    payload.update(overrides)
    return payload


@pytest.fixture
def workspace(tmp_path):
    ws = tmp_path / "ws"
    ws.mkdir()
    return ws
