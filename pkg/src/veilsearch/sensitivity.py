"""Client-side sensitivity assessment and choice of the fake-query count k.

Two independent signals drive protection:

* semantic sensitivity: does any query term fall in a user-enabled topic
  dictionary (binary);
* linkability: how close is the query to the user's own past queries,
  scored in [0, 1] by exponential smoothing of the per-query cosine
  similarities taken in ascending order, so the most similar history
  weighs most.

A semantically sensitive query always gets the maximum number of fakes;
otherwise k is the linkability score projected linearly onto [0, k_max]
with half-up rounding.

This runs in the trusted (client) zone: it only ever sees the local user's
own data.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

from veilsearch.core import (
    ProtectionDecision,
    QueryRecord,
    TopicDictionary,
    UserProfile,
    cosine,
    normalize,
)

logger = logging.getLogger(__name__)

DEFAULT_K_MAX = 7
DEFAULT_ALPHA = 0.5


@dataclass
class SensitivityConfig:
    """Knobs for the sensitivity assessment.

    ``enabled_topics=None`` means every loaded dictionary is active.
    ``profile_window=None`` consults the entire history.
    """

    k_max: int = DEFAULT_K_MAX
    smoothing_alpha: float = DEFAULT_ALPHA
    enabled_topics: frozenset[str] | None = None
    profile_window: int | None = None

    def __post_init__(self) -> None:
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if not 0.0 < self.smoothing_alpha < 1.0:
            raise ValueError("smoothing_alpha must be in (0, 1)")
        if self.profile_window is not None and self.profile_window < 1:
            raise ValueError("profile_window must be positive when set")


def smoothed_similarity(similarities: Iterable[float], alpha: float) -> float:
    """Exponentially smooth similarities in ascending order.

    Sorts ascending, seeds the accumulator with the smallest value, then
    folds ``s = alpha * x + (1 - alpha) * s`` over the rest, which weights
    the largest similarity by ``alpha``. Empty input returns 0.0.

    The same fold serves both the client's linkability score and the
    adversary's profile metric, so defender and attacker measure proximity
    identically.
    """
    sims = sorted(similarities)
    if not sims:
        return 0.0
    acc = sims[0]
    for x in sims[1:]:
        acc = alpha * x + (1.0 - alpha) * acc
    return acc


def linkability_score(
    query: QueryRecord,
    profile: UserProfile,
    alpha: float = DEFAULT_ALPHA,
    window: int | None = None,
) -> float:
    """Score in [0, 1] for how strongly a query points back at its author.

    An empty profile scores 0 (no history, nothing to link against).
    """
    past: Sequence[QueryRecord] = profile.past_queries
    if window is not None:
        past = past[-window:]
    return smoothed_similarity((cosine(query.terms, p.terms) for p in past), alpha)


def assess_semantic(
    terms: frozenset[str], dicts: Iterable[TopicDictionary]
) -> tuple[bool, frozenset[str]]:
    """Return (is_sensitive, matched topic names) for a term set."""
    matched = frozenset(d.topic for d in dicts if d.matches(terms))
    return bool(matched), matched


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def decide_protection(
    query: QueryRecord,
    profile: UserProfile,
    dicts: Iterable[TopicDictionary],
    cfg: SensitivityConfig,
) -> ProtectionDecision:
    """Combine both assessments into the per-query protection decision."""
    if cfg.enabled_topics is not None:
        dicts = [d for d in dicts if d.topic in cfg.enabled_topics]
    sensitive, topics = assess_semantic(query.terms, dicts)
    link = linkability_score(query, profile, cfg.smoothing_alpha, cfg.profile_window)
    if sensitive:
        k = cfg.k_max
    else:
        k = round_half_up(link * cfg.k_max)
    return ProtectionDecision(
        semantic_sensitive=sensitive,
        linkability=link,
        k=k,
        matched_topics=topics,
    )


def load_topic_dictionary(path: str) -> TopicDictionary:
    """Load one dictionary file: UTF-8, one term per line, ``#`` comments.

    The topic name is the file name without extension. Multi-word lines
    contribute each of their tokens, matching the term-level membership
    check used by the assessment.
    """
    topic = os.path.splitext(os.path.basename(path))[0]
    terms: set[str] = set()
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tokens = normalize(line)
            if tokens:
                terms.update(tokens)
            else:
                skipped += 1
    if skipped:
        logger.warning("dictionary %s: skipped %d unusable lines", path, skipped)
    return TopicDictionary(topic=topic, terms=frozenset(terms))


def load_dictionary_dir(directory: str) -> dict[str, TopicDictionary]:
    """Load every ``*.txt`` file in a directory as a topic dictionary."""
    dicts: dict[str, TopicDictionary] = {}
    for name in sorted(os.listdir(directory)):
        if not name.endswith(".txt"):
            continue
        d = load_topic_dictionary(os.path.join(directory, name))
        dicts[d.topic] = d
    return dicts
