"""Bounded table of queries relayed for other users, used as the fake pool.

The table lives in the sealed zone: it only ever holds queries relayed on
behalf of other nodes plus bootstrap seed entries, never the local user's
own submissions. Duplicates are kept on purpose so that popular queries
are drawn more often, which makes fakes look like real traffic.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass
from threading import Lock

from veilsearch.core import normalize

DEFAULT_CAPACITY = 10_000


@dataclass
class FakeSample:
    """Result of one sampling call; shortfall > 0 means fewer distinct
    eligible entries existed than were requested."""

    queries: list[str]
    shortfall: int = 0


@dataclass
class SeedReport:
    loaded: int
    skipped: int


class PastQueryTable:
    """FIFO of past query strings with strict oldest-first eviction.

    Thread-safe: record and sample may be called concurrently from the
    relay's request handlers.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._entries: deque[str] = deque(maxlen=capacity)
        self._lock = Lock()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def record(self, query_text: str) -> None:
        """Append one query; evicts the oldest entry when full.

        Raises ValueError for text that is empty after normalization.
        """
        if not normalize(query_text):
            raise ValueError("refusing to record empty or unusable query text")
        with self._lock:
            self._entries.append(query_text)

    def snapshot(self) -> list[str]:
        with self._lock:
            return list(self._entries)

    def sample(
        self, n: int, exclude: str | None = None, rng: random.Random | None = None
    ) -> FakeSample:
        """Draw up to ``n`` distinct query strings, never equal to ``exclude``.

        Draws walk a uniform random permutation of the table, so strings
        stored multiple times surface proportionally more often while the
        returned list stays distinct. When fewer distinct eligible strings
        exist than requested, all of them are returned and the shortfall is
        reported so the caller can lower k.
        """
        if n < 0:
            raise ValueError("n must be non-negative")
        rng = rng or random
        if n == 0:
            return FakeSample([])
        with self._lock:
            entries = list(self._entries)
        order = list(range(len(entries)))
        rng.shuffle(order)
        picked: list[str] = []
        seen: set[str] = set()
        for idx in order:
            text = entries[idx]
            if text == exclude or text in seen:
                continue
            picked.append(text)
            seen.add(text)
            if len(picked) == n:
                break
        return FakeSample(picked, shortfall=n - len(picked))

    def seed_from_file(self, path: str) -> SeedReport:
        """Record every non-empty line of a seed file, in file order.

        Unusable lines (empty after normalization) are skipped and counted.
        Raises OSError when the file cannot be read.
        """
        loaded = 0
        skipped = 0
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                text = line.strip()
                if not text:
                    skipped += 1
                    continue
                try:
                    self.record(text)
                    loaded += 1
                except ValueError:
                    skipped += 1
        return SeedReport(loaded=loaded, skipped=skipped)
