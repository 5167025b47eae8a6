"""Pluggable search engines.

The mock engine ranks a small document corpus by term overlap and is fully
deterministic, which is what makes end-to-end accuracy checks meaningful.
It carries a sliding-window rate limiter modeling the bot protection real
engines run: once a source exceeds the hourly threshold it is blocked for
a while and every request fails.

A live HTTP backend is available behind config for real deployments; it is
capped client-side so development runs do not get a node blocked for real.
"""

from __future__ import annotations

import json
import logging
import random
import threading
import time
import urllib.parse
import urllib.request
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from veilsearch.core import SearchResult, normalize

logger = logging.getLogger(__name__)

DEFAULT_WINDOW_S = 3600.0
DEFAULT_RESULT_LIMIT = 10

STATUS_OK = "ok"
STATUS_BLOCKED = "blocked"
STATUS_ERROR = "error"


@dataclass(frozen=True)
class Document:
    url: str
    title: str
    terms: frozenset[str]


@dataclass
class BackendResponse:
    status: str
    results: list[SearchResult] = field(default_factory=list)
    latency_s: float = 0.0  # simulated engine time, 0 outside simulations


class MockCorpus:
    def __init__(self, documents: list[Document]):
        urls = [d.url for d in documents]
        if len(urls) != len(set(urls)):
            raise ValueError("corpus urls must be unique")
        self.documents = list(documents)

    def __len__(self) -> int:
        return len(self.documents)

    @classmethod
    def from_jsonl(cls, path: str) -> "MockCorpus":
        """Load documents from JSON lines: {url, title, text} per line."""
        docs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                row = json.loads(line)
                docs.append(
                    Document(row["url"], row.get("title", ""), normalize(row.get("text", "")))
                )
        return cls(docs)

    @classmethod
    def synthetic(cls, rng: random.Random, n_docs: int, vocabulary: list[str]) -> "MockCorpus":
        """Generate a corpus whose documents cover a given vocabulary."""
        docs = []
        for i in range(n_docs):
            terms = frozenset(rng.sample(vocabulary, min(len(vocabulary), rng.randint(3, 8))))
            docs.append(Document(f"https://corpus.test/doc{i:04d}", f"Document {i}", terms))
        return cls(docs)


def mock_search(
    corpus: MockCorpus, query_terms: frozenset[str], limit: int = DEFAULT_RESULT_LIMIT
) -> list[SearchResult]:
    """Deterministic ranking: overlap fraction, ties broken by url.

    Only documents sharing at least one term are returned, at most
    ``limit``, ranked 1..n.
    """
    if not query_terms:
        return []
    scored = []
    for doc in corpus.documents:
        overlap = len(query_terms & doc.terms)
        if overlap:
            scored.append((-overlap / len(query_terms), doc.url, doc))
    scored.sort()
    return [
        SearchResult(url=doc.url, title=doc.title, rank=i + 1)
        for i, (_, _, doc) in enumerate(scored[:limit])
    ]


class RateLimiter:
    """Per-source sliding-window counter with a hard block state.

    The request that pushes a source past the threshold flips it to
    blocked; every later request from that source fails until the block
    expires. ``threshold=None`` disables limiting.
    """

    def __init__(
        self,
        threshold: int | None,
        window_s: float = DEFAULT_WINDOW_S,
        block_s: float = DEFAULT_WINDOW_S,
        clock: Callable[[], float] = time.time,
    ):
        self.threshold = threshold
        self.window_s = window_s
        self.block_s = block_s
        self._clock = clock
        self._hits: dict[str, deque[float]] = {}
        self._blocked_until: dict[str, float] = {}
        self._ever_blocked: set[str] = set()
        self._lock = threading.Lock()

    def check(self, source_id: str) -> bool:
        """Count one request; True when allowed, False when blocked."""
        if self.threshold is None:
            return True
        now = self._clock()
        with self._lock:
            until = self._blocked_until.get(source_id)
            if until is not None:
                if now < until:
                    return False
                del self._blocked_until[source_id]
            hits = self._hits.setdefault(source_id, deque())
            cutoff = now - self.window_s
            while hits and hits[0] <= cutoff:
                hits.popleft()
            hits.append(now)
            if len(hits) > self.threshold:
                self._blocked_until[source_id] = now + self.block_s
                self._ever_blocked.add(source_id)
                return False
            return True

    def blocked_sources(self) -> set[str]:
        with self._lock:
            return set(self._ever_blocked)


class MockBackend:
    """Corpus search behind the rate limiter, with per-source accounting."""

    def __init__(
        self,
        corpus: MockCorpus,
        limiter: RateLimiter | None = None,
        latency: Callable[[], float] | None = None,
    ):
        self.corpus = corpus
        self.limiter = limiter or RateLimiter(threshold=None)
        self._latency = latency
        self.attempts: dict[str, int] = {}
        self._lock = threading.Lock()

    def search(self, source_id: str, query_text: str) -> BackendResponse:
        with self._lock:
            self.attempts[source_id] = self.attempts.get(source_id, 0) + 1
        delay = self._latency() if self._latency else 0.0
        if not self.limiter.check(source_id):
            return BackendResponse(STATUS_BLOCKED, latency_s=delay)
        results = mock_search(self.corpus, normalize(query_text))
        return BackendResponse(STATUS_OK, results, latency_s=delay)

    def total_attempts(self) -> int:
        with self._lock:
            return sum(self.attempts.values())


class StubBackend:
    """Instant fixed answer; used by the throughput benchmark, which must
    not hit any engine."""

    def __init__(self):
        self.calls = 0
        self._results = [SearchResult("https://stub.test/1", "stub", 1)]

    def search(self, source_id: str, query_text: str) -> BackendResponse:
        self.calls += 1
        return BackendResponse(STATUS_OK, list(self._results))


class HttpBackend:
    """Live engine access via a URL template containing ``%QUERY%``.

    Expects a JSON array of {url, title} objects. Client-side capped to
    ``max_per_hour`` so a misconfigured node cannot hammer a real engine.
    """

    def __init__(self, url_template: str, max_per_hour: int = 100, timeout_s: float = 10.0):
        if "%QUERY%" not in url_template:
            raise ValueError("url_template must contain %QUERY%")
        self.url_template = url_template
        self.timeout_s = timeout_s
        self._self_cap = RateLimiter(threshold=max_per_hour)

    def search(self, source_id: str, query_text: str) -> BackendResponse:
        if not self._self_cap.check("self"):
            return BackendResponse(STATUS_BLOCKED)
        url = self.url_template.replace("%QUERY%", urllib.parse.quote(query_text))
        try:
            with urllib.request.urlopen(url, timeout=self.timeout_s) as resp:
                rows = json.loads(resp.read().decode("utf-8"))
        except Exception as exc:
            logger.warning("live backend failed: %s", exc)
            return BackendResponse(STATUS_ERROR)
        results = [
            SearchResult(url=row["url"], title=row.get("title", ""), rank=i + 1)
            for i, row in enumerate(rows[:DEFAULT_RESULT_LIMIT])
        ]
        return BackendResponse(STATUS_OK, results)
