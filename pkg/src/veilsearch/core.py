"""Shared domain types: queries, term vectors, profiles, protection decisions.

Everything in this module is an immutable value with no I/O, safe to share
between threads. The single tokenizer defined here is used project-wide so
that dictionaries, user profiles and the re-identification attack all agree
on what a "term" is.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable

_TOKEN = re.compile(r"[^\W_]+")


def normalize(raw_text: str) -> frozenset[str]:
    """Tokenize a query: lowercase, split on non-alphanumeric runs, dedupe.

    Empty input yields an empty set. Idempotent: normalizing the joined
    token set returns the same set.
    """
    return frozenset(_TOKEN.findall(raw_text.lower()))


def cosine(a: frozenset[str], b: frozenset[str]) -> float:
    """Cosine similarity of two binary term vectors.

    Equals |a ∩ b| / (sqrt(|a|) * sqrt(|b|)). Either side empty gives 0.0
    (an empty query is maximally dissimilar to everything).
    """
    if not a or not b:
        return 0.0
    overlap = len(a & b)
    if overlap == 0:
        return 0.0
    return overlap / math.sqrt(len(a) * len(b))


class Origin(Enum):
    REAL = "real"
    FAKE = "fake"


@dataclass(frozen=True)
class TermVector:
    """Binary term vector represented by its support set."""

    support: frozenset[str]

    @property
    def norm(self) -> float:
        return math.sqrt(len(self.support))

    def similarity(self, other: "TermVector") -> float:
        return cosine(self.support, other.support)


@dataclass(frozen=True)
class QueryRecord:
    """One search query with its normalized term set.

    ``terms`` is always exactly ``normalize(raw_text)``; construct through
    :meth:`make` unless you already hold a normalized set.
    """

    id: str
    raw_text: str
    terms: frozenset[str]
    issued_at: int  # epoch milliseconds
    origin: Origin = Origin.REAL

    def __post_init__(self) -> None:
        if self.terms != normalize(self.raw_text):
            raise ValueError("terms must be the normalization of raw_text")

    @classmethod
    def make(
        cls,
        raw_text: str,
        issued_at: int = 0,
        origin: Origin = Origin.REAL,
        id: str | None = None,
    ) -> "QueryRecord":
        qid = id if id is not None else f"q{issued_at}-{abs(hash(raw_text)) % 10**8}"
        return cls(qid, raw_text, normalize(raw_text), issued_at, origin)

    @property
    def vector(self) -> TermVector:
        return TermVector(self.terms)


@dataclass(frozen=True)
class UserProfile:
    """A user's past queries, ordered by issue time (non-decreasing)."""

    user_id: str
    past_queries: tuple[QueryRecord, ...]

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValueError("user_id must be non-empty")
        times = [q.issued_at for q in self.past_queries]
        if any(a > b for a, b in zip(times, times[1:])):
            raise ValueError("past_queries must be sorted by issued_at")

    @classmethod
    def build(cls, user_id: str, queries: Iterable[QueryRecord]) -> "UserProfile":
        ordered = tuple(sorted(queries, key=lambda q: q.issued_at))
        return cls(user_id, ordered)

    def __len__(self) -> int:
        return len(self.past_queries)


@dataclass(frozen=True)
class ProtectionDecision:
    """Outcome of the sensitivity assessment for one query."""

    semantic_sensitive: bool
    linkability: float
    k: int
    matched_topics: frozenset[str] = frozenset()

    def __post_init__(self) -> None:
        if not 0.0 <= self.linkability <= 1.0:
            raise ValueError("linkability must be in [0, 1]")
        if self.k < 0:
            raise ValueError("k must be non-negative")

    def to_dict(self) -> dict:
        return {
            "semantic_sensitive": self.semantic_sensitive,
            "linkability": self.linkability,
            "k": self.k,
            "matched_topics": sorted(self.matched_topics),
        }


@dataclass(frozen=True)
class TopicDictionary:
    """Term list for one sensitive topic.

    Terms are single normalized tokens; membership of any query term marks
    the query as belonging to the topic.
    """

    topic: str
    terms: frozenset[str]

    def __post_init__(self) -> None:
        if not self.terms:
            raise ValueError(f"dictionary for topic {self.topic!r} is empty")
        for term in self.terms:
            if normalize(term) != frozenset({term}):
                raise ValueError(f"term {term!r} is not a single normalized token")

    def matches(self, terms: frozenset[str]) -> bool:
        return not self.terms.isdisjoint(terms)


@dataclass(frozen=True)
class SearchResult:
    url: str
    title: str
    rank: int

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise ValueError("rank must be positive")


def validate_result_list(results: list[SearchResult]) -> None:
    """Check that ranks are exactly 1..n with no gaps or duplicates."""
    ranks = sorted(r.rank for r in results)
    if ranks != list(range(1, len(results) + 1)):
        raise ValueError(f"ranks must be 1..{len(results)}, got {ranks}")


def results_to_wire(results: list[SearchResult]) -> list[list]:
    return [[r.url, r.title, r.rank] for r in results]


def results_from_wire(rows: list[list]) -> list[SearchResult]:
    return [SearchResult(url=r[0], title=r[1], rank=int(r[2])) for r in rows]
