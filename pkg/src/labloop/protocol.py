"""Structured response protocols: THOUGHT/JSON envelopes and reflection loops.

Every agent stage expects the model to answer with free-form reasoning after
a ``THOUGHT:`` marker followed by exactly one fenced JSON record.  Parsing is
strict: no repair of truncated fences, and the *last* labeled fence wins so a
model may think out loud in earlier fences without breaking the contract.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable

from .errors import MalformedResponseError
from .llm import Conversation

THOUGHT_MARKER = "THOUGHT:"
FENCE_LABEL = "json"

#: Phrase a model includes in its thought to end a reflection loop early.
TERMINATION_PHRASE = "I am done"

FORMAT_RETRY_PROMPT = (
    "The previous response could not be parsed: {reason}\n"
    "Respond again in the exact same format. This JSON will be automatically "
    "parsed, so ensure the format is precise."
)


@dataclass(frozen=True)
class Envelope:
    thought: str
    payload: dict
    raw: str


@dataclass(frozen=True)
class ReflectionPolicy:
    max_rounds: int
    termination_phrase: str = TERMINATION_PHRASE

    def __post_init__(self):
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")


def _fence_spans(text: str, fence_label: str) -> list[tuple[int, int, int]]:
    """Return (open_line_idx, body_start_line, body_end_line) per labeled fence.

    ``body_end_line`` of -1 marks an unclosed fence.
    """
    lines = text.split("\n")
    spans = []
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if stripped == f"```{fence_label}":
            start = i + 1
            end = -1
            j = start
            while j < len(lines):
                if lines[j].strip() == "```":
                    end = j
                    break
                j += 1
            spans.append((i, start, end))
            i = j + 1 if end != -1 else len(lines)
        elif stripped.startswith("```"):
            # skip over unlabeled or differently-labeled fences entirely
            j = i + 1
            while j < len(lines) and lines[j].strip() != "```":
                j += 1
            i = j + 1
        else:
            i += 1
    return spans


def extract_fenced_payload(text: str, fence_label: str = FENCE_LABEL) -> dict:
    """Parse the payload of the last ``fence_label`` fence in ``text``.

    Raises :class:`MalformedResponseError` when no fence exists, the last
    fence is unclosed, or its body is not a single JSON object.
    """
    spans = _fence_spans(text, fence_label)
    if not spans:
        raise MalformedResponseError("no fenced payload")
    _, start, end = spans[-1]
    lines = text.split("\n")
    if end == -1:
        raise MalformedResponseError(
            "unterminated fence", span="\n".join(lines[start - 1 : start + 3])
        )
    body = "\n".join(lines[start:end]).strip()
    try:
        payload = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedResponseError(f"payload is not valid JSON: {exc}", span=body) from exc
    if not isinstance(payload, dict):
        raise MalformedResponseError("payload must be a single JSON object", span=body)
    return payload


def parse_envelope(text: str, fence_label: str = FENCE_LABEL) -> Envelope:
    """Split a response into its thought and its fenced payload.

    The thought is everything between the ``THOUGHT:`` marker and the opening
    line of the fence the payload was taken from, preserved verbatim apart
    from surrounding whitespace.  A response without the marker has an empty
    thought.
    """
    payload = extract_fenced_payload(text, fence_label)
    spans = _fence_spans(text, fence_label)
    open_line = spans[-1][0]
    lines = text.split("\n")
    prefix = "\n".join(lines[:open_line])
    marker_pos = prefix.find(THOUGHT_MARKER)
    if marker_pos == -1:
        thought = ""
    else:
        thought = prefix[marker_pos + len(THOUGHT_MARKER) :].strip()
    return Envelope(thought=thought, payload=payload, raw=text)


def request_envelope(
    conversation: Conversation,
    prompt: str,
    fence_label: str = FENCE_LABEL,
    validator: Callable[[Envelope], None] | None = None,
) -> Envelope:
    """Ask for an envelope, allowing exactly one format re-prompt.

    A malformed first answer (bad fence, bad JSON, or failed validation) gets
    one correction prompt quoting the parse failure; a second malformed
    answer fails the unit of work.
    """
    text = conversation.ask(prompt)
    try:
        envelope = parse_envelope(text, fence_label)
        if validator is not None:
            validator(envelope)
        return envelope
    except MalformedResponseError as exc:
        retry_text = conversation.ask(FORMAT_RETRY_PROMPT.format(reason=exc))
        envelope = parse_envelope(retry_text, fence_label)
        if validator is not None:
            validator(envelope)
        return envelope


def run_reflection_loop(
    conversation: Conversation,
    seed_response: str,
    policy: ReflectionPolicy,
    reprompt: str,
    fence_label: str = FENCE_LABEL,
    validator: Callable[[Envelope], None] | None = None,
) -> tuple[Envelope, int]:
    """Iteratively refine ``seed_response``, bounded by ``policy.max_rounds``.

    Each round issues one continuation built from ``reprompt`` (which may use
    ``{current_round}``, ``{num_rounds}`` and ``{num_reflections}``).  The
    loop stops at the first response whose thought contains the termination
    phrase, or when the rounds are spent.  Malformed rounds are skipped but
    still count against the budget; if no response ever parsed, the last
    parse failure is raised.

    Returns the last valid envelope and the number of rounds used.
    """
    last_valid: Envelope | None = None
    last_failure: MalformedResponseError | None = None
    try:
        last_valid = parse_envelope(seed_response, fence_label)
        if validator is not None:
            validator(last_valid)
    except MalformedResponseError as exc:
        last_valid = None
        last_failure = exc
    if last_valid is not None and policy.termination_phrase in last_valid.thought:
        return last_valid, 0

    rounds_used = 0
    for round_no in range(1, policy.max_rounds + 1):
        rounds_used = round_no
        text = conversation.ask(
            reprompt.format(
                current_round=round_no,
                num_rounds=policy.max_rounds,
                num_reflections=policy.max_rounds,
            )
        )
        try:
            envelope = parse_envelope(text, fence_label)
            if validator is not None:
                validator(envelope)
        except MalformedResponseError as exc:
            last_failure = exc
            continue
        last_valid = envelope
        if policy.termination_phrase in envelope.thought:
            return envelope, rounds_used

    if last_valid is None:
        raise MalformedResponseError(
            f"all {policy.max_rounds} reflection rounds malformed: {last_failure}"
        )
    return last_valid, rounds_used
