"""Chat-completion gateway over pluggable backends.

Backends implement a single ``complete`` method.  The shipped backends are
an OpenAI-style HTTP client and a deterministic replay backend fed from
recorded transcripts.  The gateway owns retry, token/cost accounting, and
transcript recording; everything above it is backend-agnostic.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

import requests

from .errors import RateLimitError, ReplayMissError, TransportError

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatTurn:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"{self.role} turn must have content")


@dataclass(frozen=True)
class CompletionRequest:
    turns: tuple[ChatTurn, ...]
    model_id: str
    temperature: float
    max_output_tokens: int = 4096

    def __post_init__(self):
        if not self.turns:
            raise ValueError("no turns")
        if not (0.0 <= self.temperature <= 2.0):
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise ValueError("max_output_tokens must be positive")
        system_positions = [i for i, t in enumerate(self.turns) if t.role == "system"]
        if len(system_positions) > 1:
            raise ValueError("at most one system turn allowed")
        if system_positions and system_positions[0] != 0:
            raise ValueError("system turn must come first")
        if self.turns[-1].role != "user":
            raise ValueError("conversation must end with a user turn")


def request_digest(request: CompletionRequest) -> str:
    """Stable key for a request: model, temperature, and the exact turns.

    Output-token limits are excluded on purpose; the prompt content fully
    determines the fixture.
    """
    payload = {
        "model_id": request.model_id,
        "temperature": request.temperature,
        "turns": [{"role": t.role, "content": t.content} for t in request.turns],
    }
    canonical = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class UsageDelta:
    prompt_tokens: int
    completion_tokens: int
    estimated_cost: float


@dataclass(frozen=True)
class ModelPrice:
    """Price per single input/output token."""

    input_per_token: float = 0.0
    output_per_token: float = 0.0


class UsageLedger:
    """Thread-safe, monotonically nondecreasing token and cost counters."""

    def __init__(self, prices: dict[str, ModelPrice] | None = None):
        self._lock = threading.Lock()
        self._prices = dict(prices or {})
        self.prompt_tokens = 0
        self.completion_tokens = 0
        self.estimated_cost = 0.0
        self.calls = 0

    def price_for(self, model_id: str) -> ModelPrice:
        return self._prices.get(model_id, ModelPrice())

    def record(self, model_id: str, prompt_tokens: int, completion_tokens: int) -> UsageDelta:
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValueError("token counts must be nonnegative")
        price = self.price_for(model_id)
        cost = prompt_tokens * price.input_per_token + completion_tokens * price.output_per_token
        delta = UsageDelta(prompt_tokens, completion_tokens, cost)
        with self._lock:
            self.prompt_tokens += prompt_tokens
            self.completion_tokens += completion_tokens
            self.estimated_cost += cost
            self.calls += 1
        return delta

    def snapshot(self) -> UsageDelta:
        with self._lock:
            return UsageDelta(self.prompt_tokens, self.completion_tokens, self.estimated_cost)


@dataclass(frozen=True)
class BackendResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int


class Backend(Protocol):
    def complete(self, request: CompletionRequest) -> BackendResponse: ...


class HttpBackend:
    """OpenAI-style ``/chat/completions`` client.

    The API key is read from the named environment variable at call time so
    that secrets never land in config files.
    """

    def __init__(self, endpoint: str, api_key_env: str = "LABLOOP_API_KEY", timeout_s: float = 120.0):
        self.endpoint = endpoint.rstrip("/")
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s

    def complete(self, request: CompletionRequest) -> BackendResponse:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        body = {
            "model": request.model_id,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
            "messages": [{"role": t.role, "content": t.content} for t in request.turns],
        }
        try:
            resp = requests.post(
                f"{self.endpoint}/chat/completions", json=body, headers=headers, timeout=self.timeout_s
            )
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429:
            raise RateLimitError(f"rate limited: {resp.text[:200]}")
        if resp.status_code >= 500:
            raise TransportError(f"server error {resp.status_code}: {resp.text[:200]}")
        if resp.status_code != 200:
            raise TransportError(f"unexpected status {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        usage = data.get("usage", {})
        return BackendResponse(
            text=data["choices"][0]["message"]["content"],
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


class ReplayBackend:
    """Deterministic backend fed from recorded transcripts.

    Read-only after load.  A request whose digest has no fixture fails fast
    with the digest so the mismatch can be diagnosed.
    """

    def __init__(self):
        self._fixtures: dict[str, BackendResponse] = {}

    @classmethod
    def from_transcripts(cls, paths: Iterable[str | Path]) -> "ReplayBackend":
        backend = cls()
        for path in paths:
            backend.load_transcript(path)
        return backend

    def load_transcript(self, path: str | Path) -> None:
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                self._fixtures[record["digest"]] = BackendResponse(
                    text=record["response"],
                    prompt_tokens=int(record.get("prompt_tokens", 0)),
                    completion_tokens=int(record.get("completion_tokens", 0)),
                )

    def add(self, digest: str, response: BackendResponse) -> None:
        self._fixtures[digest] = response

    def __len__(self) -> int:
        return len(self._fixtures)

    def complete(self, request: CompletionRequest) -> BackendResponse:
        digest = request_digest(request)
        try:
            return self._fixtures[digest]
        except KeyError:
            raise ReplayMissError(digest) from None


class TranscriptWriter:
    """Append-only, newline-delimited record of digest/response pairs.

    One writer per session; concurrent sessions use disjoint files, so a
    transcript never interleaves two conversations.  Replaying a transcript
    through :class:`ReplayBackend` reproduces the run byte for byte.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def append(self, request: CompletionRequest, response: BackendResponse) -> None:
        record = {
            "digest": request_digest(request),
            "model_id": request.model_id,
            "temperature": request.temperature,
            "turns": [{"role": t.role, "content": t.content} for t in request.turns],
            "response": response.text,
            "prompt_tokens": response.prompt_tokens,
            "completion_tokens": response.completion_tokens,
        }
        line = json.dumps(record, ensure_ascii=False)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")


@dataclass
class RetryPolicy:
    """Bounded exponential backoff for transport and rate-limit failures."""

    max_attempts: int = 3
    base_delay_s: float = 0.5
    factor: float = 2.0
    sleeper: Callable[[float], None] = time.sleep

    def delays(self):
        delay = self.base_delay_s
        for _ in range(self.max_attempts - 1):
            yield delay
            delay *= self.factor


class LlmClient:
    """The gateway: one backend, one ledger, optional transcript recording.

    Safe for concurrent use from multiple pipeline workers; the ledger is
    updated under its own lock and each call's delta is returned atomically.
    """

    def __init__(
        self,
        backend: Backend,
        ledger: UsageLedger | None = None,
        transcript: TranscriptWriter | None = None,
        retry: RetryPolicy | None = None,
    ):
        self.backend = backend
        self.ledger = ledger or UsageLedger()
        self.transcript = transcript
        self.retry = retry or RetryPolicy()

    @property
    def calls(self) -> int:
        return self.ledger.calls

    def with_transcript(self, transcript) -> "LlmClient":
        """A sibling client sharing backend, ledger, and retry policy."""
        return LlmClient(self.backend, ledger=self.ledger, transcript=transcript, retry=self.retry)

    def chat_complete(self, request: CompletionRequest) -> tuple[str, UsageDelta]:
        attempts = 0
        delays = self.retry.delays()
        while True:
            attempts += 1
            try:
                response = self.backend.complete(request)
                break
            except ReplayMissError:
                raise
            except (RateLimitError, TransportError) as exc:
                if attempts >= self.retry.max_attempts:
                    raise TransportError(
                        f"backend failed after {attempts} attempts: {exc}"
                    ) from exc
                pause = next(delays)
                logger.warning("backend failure (%s); retrying in %.2fs", exc, pause)
                self.retry.sleeper(pause)
        delta = self.ledger.record(request.model_id, response.prompt_tokens, response.completion_tokens)
        if self.transcript is not None:
            self.transcript.append(request, response)
        return response.text, delta


@dataclass
class ModelSettings:
    model_id: str
    temperature: float
    max_output_tokens: int = 4096


class Conversation:
    """One growing chat session bound to a client and model settings."""

    def __init__(self, client: LlmClient, settings: ModelSettings, system_prompt: str = ""):
        self.client = client
        self.settings = settings
        self.turns: list[ChatTurn] = []
        if system_prompt:
            self.turns.append(ChatTurn("system", system_prompt))

    def ask(self, user_text: str) -> str:
        self.turns.append(ChatTurn("user", user_text))
        request = CompletionRequest(
            turns=tuple(self.turns),
            model_id=self.settings.model_id,
            temperature=self.settings.temperature,
            max_output_tokens=self.settings.max_output_tokens,
        )
        text, _ = self.client.chat_complete(request)
        self.turns.append(ChatTurn("assistant", text))
        return text
