"""Scholarly search client used by novelty checking and citation gathering.

Two interchangeable clients: an HTTP client for a Semantic-Scholar-style
graph API, and a fixture client reading recorded response bodies keyed by
the normalized query, so everything above it tests offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import requests

from .errors import RateLimitError, TransportError
from .prompts import EMPTY_RESULTS_SENTINEL

logger = logging.getLogger(__name__)

DEFAULT_RESULT_LIMIT = 10
DEFAULT_ABSTRACT_BUDGET = 1500


@dataclass(frozen=True)
class SearchQuery:
    query: str
    limit: int = DEFAULT_RESULT_LIMIT

    def __post_init__(self):
        if not self.query.strip():
            raise ValueError("query must be non-empty")
        if self.limit < 1:
            raise ValueError("limit must be positive")


@dataclass(frozen=True)
class SearchResult:
    title: str
    authors: tuple[str, ...]
    year: int
    abstract: str
    venue: str
    citation_key: str
    bibtex: str


def normalize_query(query: str) -> str:
    return re.sub(r"\s+", " ", query.strip().lower())


def fixture_filename(query: str) -> str:
    """Fixture files are keyed by a digest of the normalized query."""
    return hashlib.sha1(normalize_query(query).encode("utf-8")).hexdigest() + ".json"


def make_citation_key(title: str, authors: tuple[str, ...], year: int) -> str:
    surname = authors[0].split()[-1].lower() if authors else "anon"
    word = next((w.lower() for w in re.findall(r"[A-Za-z]+", title)), "paper")
    return re.sub(r"[^a-z0-9]", "", f"{surname}{year}{word}")


def synthesize_bibtex(title: str, authors: tuple[str, ...], year: int, venue: str, key: str) -> str:
    """Minimal entry for results whose API record carried no bibtex."""
    author_field = " and ".join(authors) if authors else "Unknown"
    lines = [
        f"@article{{{key},",
        f" title={{{title}}},",
        f" author={{{author_field}}},",
        f" year={{{year}}},",
    ]
    if venue:
        lines.append(f" journal={{{venue}}},")
    lines.append("}")
    return "\n".join(lines)


def _result_from_record(record: dict, used_keys: set[str]) -> SearchResult:
    title = (record.get("title") or "").strip()
    if not title:
        raise ValueError("search result without a title")
    authors = tuple(
        a["name"] if isinstance(a, dict) else str(a) for a in record.get("authors") or ()
    )
    year = int(record.get("year") or 0)
    abstract = record.get("abstract") or ""
    venue = record.get("venue") or ""
    key = record.get("citationStyles", {}).get("bibtex", "")
    bibtex = ""
    if key:
        bibtex = key
        match = re.search(r"@\w+\{([^,]+),", bibtex)
        key = match.group(1).strip() if match else ""
    if not key:
        key = make_citation_key(title, authors, year)
    base = key
    suffix = 2
    while key in used_keys:
        key = f"{base}{suffix}"
        suffix += 1
    used_keys.add(key)
    if not bibtex:
        bibtex = synthesize_bibtex(title, authors, year, venue, key)
    return SearchResult(
        title=title,
        authors=authors,
        year=year,
        abstract=abstract,
        venue=venue,
        citation_key=key,
        bibtex=bibtex,
    )


def parse_results(body: dict, limit: int) -> list[SearchResult]:
    """Convert an API response body into results, preserving order."""
    used_keys: set[str] = set()
    results = []
    for record in (body.get("data") or [])[:limit]:
        try:
            results.append(_result_from_record(record, used_keys))
        except (ValueError, TypeError) as exc:
            logger.warning("skipping malformed search record: %s", exc)
    return results


class LiteratureClient(Protocol):
    def search(self, q: SearchQuery) -> list[SearchResult]: ...


class TokenBucket:
    """Serializes bursts: ``rate`` requests per second, ``burst`` capacity."""

    def __init__(self, rate: float = 1.0, burst: int = 1, clock=time.monotonic, sleeper=time.sleep):
        self.rate = rate
        self.burst = burst
        self._tokens = float(burst)
        self._last = clock()
        self._clock = clock
        self._sleeper = sleeper
        self._lock = threading.Lock()

    def acquire(self):
        with self._lock:
            now = self._clock()
            self._tokens = min(self.burst, self._tokens + (now - self._last) * self.rate)
            self._last = now
            if self._tokens >= 1.0:
                self._tokens -= 1.0
                return
            wait = (1.0 - self._tokens) / self.rate
            self._tokens = 0.0
        self._sleeper(wait)


class HttpLiteratureClient:
    """Client for a Semantic-Scholar-style ``/paper/search`` endpoint."""

    FIELDS = "title,authors,year,abstract,venue,citationStyles"

    def __init__(
        self,
        endpoint: str = "https://api.semanticscholar.org/graph/v1",
        api_key: str = "",
        rate_limiter: TokenBucket | None = None,
        max_retries: int = 3,
        backoff_s: float = 2.0,
        sleeper=time.sleep,
        timeout_s: float = 30.0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.api_key = api_key
        self.rate_limiter = rate_limiter or TokenBucket(rate=1.0, burst=1)
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self.sleeper = sleeper
        self.timeout_s = timeout_s

    def search(self, q: SearchQuery) -> list[SearchResult]:
        headers = {"x-api-key": self.api_key} if self.api_key else {}
        params = {"query": q.query.strip(), "limit": q.limit, "fields": self.FIELDS}
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            self.rate_limiter.acquire()
            try:
                resp = requests.get(
                    f"{self.endpoint}/paper/search",
                    params=params,
                    headers=headers,
                    timeout=self.timeout_s,
                )
            except requests.RequestException as exc:
                last_error = TransportError(str(exc))
            else:
                if resp.status_code == 200:
                    return parse_results(resp.json(), q.limit)
                if resp.status_code == 429:
                    last_error = RateLimitError("search API rate limited")
                else:
                    last_error = TransportError(f"search API status {resp.status_code}")
            if attempt < self.max_retries - 1:
                self.sleeper(self.backoff_s * (2**attempt))
        raise last_error  # type: ignore[misc]


class FixtureLiteratureClient:
    """Reads recorded response bodies from a directory of fixture files."""

    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)

    def search(self, q: SearchQuery) -> list[SearchResult]:
        path = self.fixture_dir / fixture_filename(q.query)
        if not path.exists():
            return []
        body = json.loads(path.read_text(encoding="utf-8"))
        return parse_results(body, q.limit)

    def record(self, query: str, body: dict) -> None:
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        path = self.fixture_dir / fixture_filename(query)
        path.write_text(json.dumps(body, indent=1, ensure_ascii=False), encoding="utf-8")


def render_results_for_prompt(
    results: list[SearchResult], abstract_budget: int = DEFAULT_ABSTRACT_BUDGET
) -> str:
    """Numbered entries with title, authors, year, venue and abstract.

    Deterministic; abstracts are truncated to ``abstract_budget`` characters
    to bound prompt size.
    """
    if not results:
        return EMPTY_RESULTS_SENTINEL
    entries = []
    for i, r in enumerate(results, start=1):
        abstract = r.abstract or "(no abstract available)"
        if len(abstract) > abstract_budget:
            abstract = abstract[: abstract_budget - 3] + "..."
        authors = ", ".join(r.authors) if r.authors else "Unknown"
        venue = f" Venue: {r.venue}." if r.venue else ""
        entries.append(
            f"{i}: {r.title}. {authors}. {r.year}.{venue}\nAbstract: {abstract}"
        )
    return "\n\n".join(entries)
