"""The automated reviewer: form-based reviews, ensembling, calibration."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .errors import MalformedResponseError, StageFailure
from .llm import Conversation, LlmClient, ModelSettings
from .pdftext import PdfParseError, extract_pdf_text
from .prompts import (
    META_REVIEW_SYSTEM_PROMPT,
    REVIEW_PROMPT,
    REVIEW_REFLECTION_PROMPT,
    REVIEW_SYSTEM_PROMPT,
    render_reviews_for_meta,
)
from .protocol import Envelope, ReflectionPolicy, request_envelope, run_reflection_loop

logger = logging.getLogger(__name__)

__all__ = [
    "Review",
    "ReviewerConfig",
    "extract_pdf_text",
    "PdfParseError",
    "review_once",
    "review_ensemble",
    "calibrate_decision",
    "apply_calibration",
    "load_review",
    "save_review",
]

ACCEPT = "accept"
REJECT = "reject"

RANGES = {
    "Soundness": (1, 4),
    "Presentation": (1, 4),
    "Contribution": (1, 4),
    "Overall": (1, 10),
    "Confidence": (1, 5),
}

SPAN_FIELDS = ("soundness", "presentation", "contribution", "overall", "confidence")


@dataclass(frozen=True)
class Review:
    soundness: int
    presentation: int
    contribution: int
    overall: int
    confidence: int
    strengths: tuple[str, ...]
    weaknesses: tuple[str, ...]
    questions: tuple[str, ...]
    decision: str
    preliminary_decision: str
    summary: str = ""

    def __post_init__(self):
        for name, (low, high) in (
            ("soundness", (1, 4)),
            ("presentation", (1, 4)),
            ("contribution", (1, 4)),
            ("overall", (1, 10)),
            ("confidence", (1, 5)),
        ):
            value = getattr(self, name)
            if not (low <= value <= high):
                raise ValueError(f"{name} {value} outside [{low}, {high}]")
        if not self.strengths or not self.weaknesses:
            raise ValueError("strengths and weaknesses must be nonempty")
        for name in ("decision", "preliminary_decision"):
            if getattr(self, name) not in (ACCEPT, REJECT):
                raise ValueError(f"{name} must be accept or reject")

    def to_record(self) -> dict:
        return {
            "soundness": self.soundness,
            "presentation": self.presentation,
            "contribution": self.contribution,
            "overall": self.overall,
            "confidence": self.confidence,
            "strengths": list(self.strengths),
            "weaknesses": list(self.weaknesses),
            "questions": list(self.questions),
            "decision": self.decision,
            "preliminary_decision": self.preliminary_decision,
            "summary": self.summary,
        }

    def to_payload(self) -> dict:
        """The model-facing (capitalized) rendering of this review."""
        return {
            "Summary": self.summary,
            "Strengths": list(self.strengths),
            "Weaknesses": list(self.weaknesses),
            "Questions": list(self.questions),
            "Soundness": self.soundness,
            "Presentation": self.presentation,
            "Contribution": self.contribution,
            "Overall": self.overall,
            "Confidence": self.confidence,
            "Decision": "Accept" if self.preliminary_decision == ACCEPT else "Reject",
        }


@dataclass(frozen=True)
class ReviewerConfig:
    reflections: int = 5
    fewshot_examples: int = 1
    ensemble_size: int = 5
    temperature: float = 0.1
    decision_threshold: int = 6
    quorum: int | None = None

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if not (1 <= self.decision_threshold <= 10):
            raise ValueError("decision_threshold must lie in [1, 10]")

    @property
    def effective_quorum(self) -> int:
        return self.quorum if self.quorum is not None else self.ensemble_size


def reviewer_guidelines() -> str:
    return (resources.files("labloop") / "data" / "review_form.txt").read_text(encoding="utf-8")


def few_shot_block(count: int) -> str:
    if count < 1:
        return ""
    # one packaged exemplar ships with the reviewer
    return (resources.files("labloop") / "data" / "review_example_1.txt").read_text(
        encoding="utf-8"
    )


def validate_review_payload(envelope: Envelope) -> None:
    payload = envelope.payload
    for key, (low, high) in RANGES.items():
        value = payload.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or not (low <= value <= high):
            raise MalformedResponseError(
                f'"{key}" must be an integer in [{low}, {high}], got {value!r}'
            )
    for key in ("Strengths", "Weaknesses"):
        value = payload.get(key)
        if not isinstance(value, list) or not [v for v in value if str(v).strip()]:
            raise MalformedResponseError(f'"{key}" must be a nonempty list')
    decision = str(payload.get("Decision", "")).strip().lower()
    if decision not in (ACCEPT, REJECT):
        raise MalformedResponseError(
            f'"Decision" must be Accept or Reject, got {payload.get("Decision")!r}'
        )


def review_from_envelope(envelope: Envelope) -> Review:
    p = envelope.payload
    decision = str(p["Decision"]).strip().lower()
    return Review(
        soundness=p["Soundness"],
        presentation=p["Presentation"],
        contribution=p["Contribution"],
        overall=p["Overall"],
        confidence=p["Confidence"],
        strengths=tuple(str(s) for s in p["Strengths"]),
        weaknesses=tuple(str(w) for w in p["Weaknesses"]),
        questions=tuple(str(q) for q in p.get("Questions") or ()),
        decision=decision,
        preliminary_decision=decision,
        summary=str(p.get("Summary", "")),
    )


def review_once(client: LlmClient, settings: ModelSettings, text: str, config: ReviewerConfig) -> Review:
    """One reviewer pass: form-based review plus a bounded reflection loop."""
    if not text.strip():
        raise ValueError("cannot review an empty manuscript")
    conversation = Conversation(client, settings, REVIEW_SYSTEM_PROMPT)
    prompt = REVIEW_PROMPT.format(
        reviewer_guidelines=reviewer_guidelines(),
        few_shot_examples=few_shot_block(config.fewshot_examples),
        paper=text,
    )
    envelope = request_envelope(conversation, prompt, validator=validate_review_payload)
    if config.reflections >= 1:
        envelope, rounds = run_reflection_loop(
            conversation,
            envelope.raw,
            ReflectionPolicy(max_rounds=config.reflections),
            REVIEW_REFLECTION_PROMPT,
            validator=validate_review_payload,
        )
        logger.debug("review settled after %d reflection rounds", rounds)
    return review_from_envelope(envelope)


def _check_span(meta: Review, members: list[Review]) -> None:
    for field_name in SPAN_FIELDS:
        values = [getattr(r, field_name) for r in members]
        low, high = min(values), max(values)
        value = getattr(meta, field_name)
        if not (low <= value <= high):
            raise MalformedResponseError(
                f"meta-review {field_name} {value} outside ensemble span [{low}, {high}]"
            )


class _BufferTranscript:
    """Collects one ensemble member's records for ordered flushing."""

    def __init__(self):
        self.records = []

    def append(self, request, response) -> None:
        self.records.append((request, response))


def review_ensemble(
    client: LlmClient, settings: ModelSettings, text: str, config: ReviewerConfig
) -> Review:
    """Independent reviews aggregated through an area-chair meta-review.

    Members run concurrently; each is its own session, so its transcript
    records are buffered and flushed in member order rather than interleaved.
    The meta-review must stay within the ensemble's per-field score span; a
    violation is an error, not a clamp.
    """
    buffers = [_BufferTranscript() if client.transcript else None for _ in range(config.ensemble_size)]
    member_clients = [client.with_transcript(buf) for buf in buffers]
    members: list[Review] = []
    with ThreadPoolExecutor(max_workers=config.ensemble_size) as pool:
        futures = [
            pool.submit(review_once, member_clients[i], settings, text, config)
            for i in range(config.ensemble_size)
        ]
        for future in futures:
            try:
                members.append(future.result())
            except (MalformedResponseError, StageFailure) as exc:
                logger.warning("ensemble member failed: %s", exc)
    if client.transcript is not None:
        for buf in buffers:
            for request, response in buf.records:
                client.transcript.append(request, response)
    if len(members) < config.effective_quorum:
        raise StageFailure(
            "review",
            f"only {len(members)} of {config.ensemble_size} reviews valid "
            f"(quorum {config.effective_quorum})",
        )
    rendered = [json.dumps(r.to_payload(), indent=1) for r in members]
    meta_conversation = Conversation(
        client, settings, META_REVIEW_SYSTEM_PROMPT.format(reviewer_count=len(members))
    )
    meta_prompt = render_reviews_for_meta(rendered, reviewer_guidelines())
    envelope = request_envelope(meta_conversation, meta_prompt, validator=validate_review_payload)
    meta = review_from_envelope(envelope)
    _check_span(meta, members)
    return meta


def calibrate_decision(review: Review, threshold: int) -> str:
    """Accept iff the overall score clears the threshold."""
    return ACCEPT if review.overall >= threshold else REJECT


def apply_calibration(review: Review, threshold: int) -> Review:
    return replace(review, decision=calibrate_decision(review, threshold))


def save_review(review: Review, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(review.to_record(), indent=1, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_review(record: dict) -> Review:
    return Review(
        soundness=record["soundness"],
        presentation=record["presentation"],
        contribution=record["contribution"],
        overall=record["overall"],
        confidence=record["confidence"],
        strengths=tuple(record["strengths"]),
        weaknesses=tuple(record["weaknesses"]),
        questions=tuple(record.get("questions", ())),
        decision=record["decision"],
        preliminary_decision=record.get("preliminary_decision", record["decision"]),
        summary=record.get("summary", ""),
    )
