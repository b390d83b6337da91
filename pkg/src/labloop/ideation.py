"""Idea archive growth and the literature-backed novelty filter."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import MalformedResponseError, TransportError
from .literature import LiteratureClient, SearchQuery, render_results_for_prompt
from .llm import Conversation, LlmClient, ModelSettings
from .prompts import (
    DECISION_NOT_NOVEL,
    DECISION_NOVEL,
    FORMAT_RETRY_PROMPT_MISSING_QUERY,
    IDEA_GENERATION_PROMPT,
    IDEA_REFLECTION_PROMPT,
    IDEA_SYSTEM_PROMPT,
    NOVELTY_ROUND_PROMPT,
    NOVELTY_SYSTEM_PROMPT,
)
from .protocol import (
    FORMAT_RETRY_PROMPT,
    Envelope,
    ReflectionPolicy,
    parse_envelope,
    request_envelope,
    run_reflection_loop,
)

logger = logging.getLogger(__name__)

NAME_RULE = re.compile(r"^[a-z][a-z0-9_]*$")

SCORE_FIELDS = ("Interestingness", "Feasibility", "Novelty")


@dataclass(frozen=True)
class Idea:
    name: str
    title: str
    experiment: str
    interestingness: int
    feasibility: int
    novelty_score: int
    novel: bool | None = None

    def __post_init__(self):
        if not NAME_RULE.match(self.name):
            raise ValueError(f"idea name {self.name!r} must be lowercase with underscores")
        for label, value in (
            ("interestingness", self.interestingness),
            ("feasibility", self.feasibility),
            ("novelty score", self.novelty_score),
        ):
            if not (1 <= value <= 10):
                raise ValueError(f"{label} {value} outside [1, 10]")

    def to_record(self) -> dict:
        return {
            "Name": self.name,
            "Title": self.title,
            "Experiment": self.experiment,
            "Interestingness": self.interestingness,
            "Feasibility": self.feasibility,
            "Novelty": self.novelty_score,
            "novel": self.novel,
        }

    @classmethod
    def from_record(cls, record: dict) -> "Idea":
        return cls(
            name=record["Name"],
            title=record["Title"],
            experiment=record["Experiment"],
            interestingness=int(record["Interestingness"]),
            feasibility=int(record["Feasibility"]),
            novelty_score=int(record["Novelty"]),
            novel=record.get("novel"),
        )


def validate_idea_payload(envelope: Envelope) -> None:
    """Strict schema check for a generated idea; extra fields are ignored."""
    payload = envelope.payload
    for key in ("Name", "Title", "Experiment"):
        value = payload.get(key)
        if not isinstance(value, str) or not value.strip():
            raise MalformedResponseError(f'missing or empty "{key}" field')
    if not NAME_RULE.match(payload["Name"]):
        raise MalformedResponseError(
            f'"Name" must be lowercase with underscores, got {payload["Name"]!r}'
        )
    for key in SCORE_FIELDS:
        value = payload.get(key)
        if not isinstance(value, int) or isinstance(value, bool) or not (1 <= value <= 10):
            raise MalformedResponseError(
                f'"{key}" must be an integer rating from 1 to 10, got {value!r}'
            )


def idea_from_envelope(envelope: Envelope) -> Idea:
    p = envelope.payload
    return Idea(
        name=p["Name"],
        title=p["Title"],
        experiment=p["Experiment"],
        interestingness=p["Interestingness"],
        feasibility=p["Feasibility"],
        novelty_score=p["Novelty"],
        novel=None,
    )


class IdeaArchive:
    """Ordered idea store: seeds first, generated ideas appended after."""

    def __init__(self, ideas: list[Idea] | None = None, seed_count: int = 0):
        self.ideas: list[Idea] = list(ideas or [])
        self.seed_count = seed_count
        names = [i.name for i in self.ideas]
        if len(names) != len(set(names)):
            raise ValueError("idea names must be unique")

    def names(self) -> set[str]:
        return {i.name for i in self.ideas}

    def add(self, idea: Idea) -> None:
        if idea.name in self.names():
            raise ValueError(f"duplicate idea name {idea.name!r}")
        self.ideas.append(idea)

    def update(self, idea: Idea) -> None:
        """Replace the entry with the same name (e.g. after a novelty check)."""
        for i, existing in enumerate(self.ideas):
            if existing.name == idea.name:
                self.ideas[i] = idea
                return
        raise KeyError(idea.name)

    def free_name(self, name: str) -> str:
        if name not in self.names():
            return name
        suffix = 2
        while f"{name}_{suffix}" in self.names():
            suffix += 1
        return f"{name}_{suffix}"

    def render_for_prompt(self) -> str:
        """Full serialized records, newest last."""
        return "\n\n".join(json.dumps(i.to_record(), indent=1) for i in self.ideas)

    def save(self, path: str | Path) -> None:
        payload = {
            "seed_count": self.seed_count,
            "ideas": [i.to_record() for i in self.ideas],
        }
        Path(path).write_text(json.dumps(payload, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "IdeaArchive":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            ideas=[Idea.from_record(r) for r in data["ideas"]],
            seed_count=int(data.get("seed_count", 0)),
        )

    @classmethod
    def from_seed_file(cls, path: str | Path) -> "IdeaArchive":
        """Seed files hold a bare list of idea records."""
        records = json.loads(Path(path).read_text(encoding="utf-8"))
        ideas = [Idea.from_record(r) for r in records]
        return cls(ideas=ideas, seed_count=len(ideas))


def generate_idea(
    client: LlmClient,
    settings: ModelSettings,
    archive: IdeaArchive,
    task_description: str,
    code: str,
    reflections: int = 3,
) -> Idea:
    """Propose the next idea conditioned on the archive.

    The archive must hold at least one seed idea.  Returns a validated idea
    with an undetermined novelty flag and a name disambiguated against the
    archive; the archive itself is never mutated here.
    """
    if not archive.ideas:
        raise ValueError("archive must contain at least one seed idea")
    conversation = Conversation(client, settings, IDEA_SYSTEM_PROMPT)
    prompt = IDEA_GENERATION_PROMPT.format(
        task_description=task_description,
        code=code,
        prev_ideas_string=archive.render_for_prompt(),
        num_reflections=reflections,
    )
    envelope = request_envelope(conversation, prompt, validator=validate_idea_payload)
    if reflections >= 1:
        envelope, rounds = run_reflection_loop(
            conversation,
            envelope.raw,
            ReflectionPolicy(max_rounds=reflections),
            IDEA_REFLECTION_PROMPT,
            validator=validate_idea_payload,
        )
        logger.debug("idea refined over %d reflection rounds", rounds)
    idea = idea_from_envelope(envelope)
    free = archive.free_name(idea.name)
    if free != idea.name:
        logger.info("idea name %s already taken; using %s", idea.name, free)
        idea = replace(idea, name=free)
    return idea


def check_novelty(
    client: LlmClient,
    settings: ModelSettings,
    idea: Idea,
    literature: LiteratureClient,
    task_description: str,
    code: str,
    rounds: int = 10,
    results_limit: int = 10,
) -> Idea:
    """Bounded search dialogue deciding whether an idea is novel.

    At most ``rounds`` model calls and ``rounds`` searches are issued; format
    retries consume round budget.  Exhaustion without a decision is treated
    as not novel, the safe direction for a discard filter.
    """
    conversation = Conversation(
        client,
        settings,
        NOVELTY_SYSTEM_PROMPT.format(
            num_rounds=rounds,
            results_limit=results_limit,
            task_description=task_description,
            code=code,
        ),
    )
    idea_text = json.dumps(idea.to_record(), indent=1)
    last_results_text = ""
    used_retry = False
    calls = 0
    round_no = 0
    next_message: str | None = None
    while calls < rounds:
        if next_message is None:
            round_no += 1
            next_message = NOVELTY_ROUND_PROMPT.format(
                current_round=round_no,
                num_rounds=rounds,
                idea=idea_text,
                last_query_results=last_results_text,
            )
        calls += 1
        text = conversation.ask(next_message)
        next_message = None
        try:
            envelope = parse_envelope(text)
        except MalformedResponseError as exc:
            if used_retry or calls >= rounds:
                logger.warning("novelty dialogue malformed for %s: %s", idea.name, exc)
                return replace(idea, novel=False)
            used_retry = True
            next_message = FORMAT_RETRY_PROMPT.format(reason=exc)
            continue
        if DECISION_NOT_NOVEL in envelope.thought:
            return replace(idea, novel=False)
        if DECISION_NOVEL in envelope.thought:
            return replace(idea, novel=True)
        query = envelope.payload.get("Query")
        if not isinstance(query, str) or not query.strip():
            if used_retry or calls >= rounds:
                logger.warning("novelty round for %s gave no decision and no query", idea.name)
                return replace(idea, novel=False)
            used_retry = True
            next_message = FORMAT_RETRY_PROMPT_MISSING_QUERY
            continue
        try:
            results = literature.search(SearchQuery(query.strip(), limit=results_limit))
        except TransportError as exc:
            logger.warning("novelty search failed (%s); continuing with no results", exc)
            results = []
        last_results_text = render_results_for_prompt(results)
    return replace(idea, novel=False)
