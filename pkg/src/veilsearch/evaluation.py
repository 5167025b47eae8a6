"""Dataset ingestion, the re-identification adversary, and the metric
families used to evaluate protection mechanisms.

The adversary models an honest-but-curious engine: it holds one profile of
past queries per user (the training split) and sees an anonymous stream of
queries. For each observed query it computes, against every profile, the
same ascending-order smoothed-similarity fold the client uses for its
linkability score; when the best profile scores above the confidence
threshold and is the unique maximum, the query is attributed to that user.

A protection mechanism is measured by the fraction of the observed stream
that ends up correctly attributed to the user who actually issued it.
Fake queries inflate the stream and draw attributions towards other
users' profiles, so stronger obfuscation pushes the rate down.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone

from veilsearch.core import Origin, QueryRecord, UserProfile, cosine, normalize
from veilsearch.sensitivity import (
    SensitivityConfig,
    decide_protection,
    smoothed_similarity,
)

logger = logging.getLogger(__name__)

CONFIDENCE_THRESHOLD = 0.5
AOL_COLUMNS = ("AnonID", "Query", "QueryTime", "ItemRank", "ClickURL")


# ---------------------------------------------------------------------------
# ingestion
# ---------------------------------------------------------------------------


@dataclass
class QueryLog:
    records: list[tuple[str, str, int]]  # (user_id, raw text, epoch ms)
    source_format: str
    skipped: int = 0

    def __len__(self) -> int:
        return len(self.records)

    def user_ids(self) -> list[str]:
        return sorted({u for u, _, _ in self.records})


def _parse_ts(value: str) -> int:
    value = value.strip()
    try:
        dt = datetime.fromisoformat(value)
    except ValueError:
        dt = datetime.strptime(value, "%Y-%m-%d %H:%M:%S")
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp() * 1000)


def ingest_log(path: str, fmt: str = "aol_tsv") -> QueryLog:
    """Load a query log.

    ``aol_tsv``: tab-separated with the classic five-column header
    (AnonID, Query, QueryTime, ItemRank, ClickURL). ``simple_csv``:
    ``user_id,query,iso_timestamp`` with an optional header. Malformed rows
    are skipped and counted; a file with zero valid rows is an error.
    """
    if fmt not in ("aol_tsv", "simple_csv"):
        raise ValueError(f"unknown log format {fmt!r}")
    records: list[tuple[str, str, int]] = []
    skipped = 0
    with open(path, encoding="utf-8", errors="replace") as fh:
        if fmt == "aol_tsv":
            reader = csv.reader(fh, delimiter="\t")
            for i, row in enumerate(reader):
                if i == 0 and row and row[0].strip() == "AnonID":
                    continue
                if len(row) < 3:
                    skipped += 1
                    continue
                user, query, ts = row[0].strip(), row[1].strip(), row[2]
                if not user or not query or not normalize(query):
                    skipped += 1
                    continue
                try:
                    records.append((user, query, _parse_ts(ts)))
                except ValueError:
                    skipped += 1
        else:
            reader = csv.reader(fh)
            for i, row in enumerate(reader):
                if i == 0 and row and row[0].strip().lower() == "user_id":
                    continue
                if len(row) < 3:
                    skipped += 1
                    continue
                user, query, ts = row[0].strip(), row[1].strip(), row[2]
                if not user or not query or not normalize(query):
                    skipped += 1
                    continue
                try:
                    records.append((user, query, _parse_ts(ts)))
                except ValueError:
                    skipped += 1
    if not records:
        raise ValueError(f"no valid rows in {path}")
    if skipped:
        logger.info("ingest %s: %d rows skipped", path, skipped)
    return QueryLog(records, fmt, skipped)


# ---------------------------------------------------------------------------
# train/test split
# ---------------------------------------------------------------------------


@dataclass
class SplitResult:
    profiles: dict[str, UserProfile]  # the adversary's prior knowledge
    test: list[tuple[str, QueryRecord]]  # (true author, protected query)
    dropped_users: int

    @property
    def training_total(self) -> int:
        return sum(len(p) for p in self.profiles.values())


def split_train_test(log: QueryLog, min_queries: int = 3) -> SplitResult:
    """Per user, chronologically first 2/3 to the profile, rest to test.

    Users with fewer than ``min_queries`` queries are dropped (too little
    history to either attack or protect meaningfully).
    """
    by_user: dict[str, list[tuple[int, str]]] = {}
    for user, text, ts in log.records:
        by_user.setdefault(user, []).append((ts, text))
    profiles: dict[str, UserProfile] = {}
    test: list[tuple[str, QueryRecord]] = []
    dropped = 0
    for user in sorted(by_user):
        rows = sorted(by_user[user], key=lambda r: r[0])
        if len(rows) < min_queries:
            dropped += 1
            continue
        cut = len(rows) * 2 // 3
        train = [
            QueryRecord.make(text, issued_at=ts, origin=Origin.REAL, id=f"{user}-t{i}")
            for i, (ts, text) in enumerate(rows[:cut])
        ]
        profiles[user] = UserProfile.build(user, train)
        for i, (ts, text) in enumerate(rows[cut:]):
            test.append(
                (user, QueryRecord.make(text, issued_at=ts, origin=Origin.REAL, id=f"{user}-q{i}"))
            )
    return SplitResult(profiles, test, dropped)


# ---------------------------------------------------------------------------
# the adversary
# ---------------------------------------------------------------------------


class ProfileIndex:
    """Precomputed term sets per profile so attacks stay fast."""

    def __init__(self, profiles: dict[str, UserProfile]):
        self.users = sorted(profiles)
        self.term_sets = {
            u: [q.terms for q in profiles[u].past_queries] for u in self.users
        }
        self.unions = {
            u: frozenset().union(*sets) if (sets := self.term_sets[u]) else frozenset()
            for u in self.users
        }

    def metric(self, terms: frozenset[str], user: str, alpha: float) -> float:
        if not terms or self.unions[user].isdisjoint(terms):
            return 0.0
        return smoothed_similarity(
            (cosine(terms, past) for past in self.term_sets[user]), alpha
        )

    def absorb(self, user: str, terms: frozenset[str]) -> None:
        """Online-adversary extension: fold an attributed query into the
        profile it was attributed to."""
        self.term_sets[user].append(terms)
        self.unions[user] = self.unions[user] | terms


def reidentify(
    terms: frozenset[str],
    index: ProfileIndex,
    alpha: float = 0.5,
    threshold: float = CONFIDENCE_THRESHOLD,
) -> str | None:
    """Attribute one anonymous query to a user, or None.

    Returns the user whose profile metric is maximal, provided the maximum
    exceeds the confidence threshold and is attained by exactly one
    profile; ties or weak evidence leave the query unattributed.
    """
    best: str | None = None
    best_score = 0.0
    tied = False
    for user in index.users:
        score = index.metric(terms, user, alpha)
        if score > best_score:
            best, best_score, tied = user, score, False
        elif score == best_score and score > 0.0:
            tied = True
    if best is None or best_score <= threshold or tied:
        return None
    return best


# ---------------------------------------------------------------------------
# attack runner
# ---------------------------------------------------------------------------


MECHANISMS = ("none", "adaptive", "fixed_k")


@dataclass
class AttackConfig:
    k_max: int = 7
    alpha: float = 0.5
    threshold: float = CONFIDENCE_THRESHOLD
    seed: int = 0
    dictionaries: tuple = ()
    enabled_topics: frozenset[str] | None = None
    # extension: the adversary grows profiles with the queries it attributes
    # to them while the attack runs (off by default for determinism across
    # stream orderings; results with it are exploratory)
    online_adversary: bool = False


@dataclass
class AttackOutcome:
    mechanism: str
    attacked: int  # size of the observed stream (reals + fakes)
    real_queries: int
    reidentified: int  # real queries mapped to their true author
    rate: float
    k_histogram: dict[int, int] = field(default_factory=dict)
    per_user: dict[str, dict] = field(default_factory=dict)
    verdicts: list[tuple[str | None, str | None]] = field(default_factory=list)
    # verdicts: (true author or None for fakes, attribution or None)

    def to_dict(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "attacked": self.attacked,
            "real_queries": self.real_queries,
            "reidentified": self.reidentified,
            "reidentification_rate": self.rate,
            "k_histogram": {str(k): v for k, v in sorted(self.k_histogram.items())},
            "per_user": self.per_user,
        }


def run_attack(
    mechanism: str,
    test: list[tuple[str, QueryRecord]],
    profiles: dict[str, UserProfile],
    cfg: AttackConfig | None = None,
) -> AttackOutcome:
    """Feed the adversary the query stream a mechanism would emit.

    ``none``    anonymous but unobfuscated: the real queries only.
    ``adaptive``each real query plus its adaptively chosen k fakes.
    ``fixed_k`` always k_max fakes per real query.

    Fakes are drawn from the union of *other* users' training queries,
    mirroring relays' past-query tables. Every stream entry is delivered
    independently and anonymously; a real query counts as re-identified
    only when the adversary attributes it to its true author. The rate
    divides by the whole observed stream, which is what the engine sees.
    """
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    if not test:
        raise ValueError("empty test set")
    cfg = cfg or AttackConfig()
    rng = random.Random(cfg.seed)
    index = ProfileIndex(profiles)
    sens_cfg = SensitivityConfig(
        k_max=cfg.k_max, smoothing_alpha=cfg.alpha, enabled_topics=cfg.enabled_topics
    )

    pool_all: list[tuple[str, str]] = []  # (owner, text)
    for user in sorted(profiles):
        for q in profiles[user].past_queries:
            pool_all.append((user, q.raw_text))

    stream: list[tuple[str | None, frozenset[str]]] = []  # (true author | None, terms)
    k_hist: dict[int, int] = {}
    for user, record in test:
        if mechanism == "none":
            k = 0
        elif mechanism == "fixed_k":
            k = cfg.k_max
        else:
            decision = decide_protection(
                record, profiles.get(user) or UserProfile(user, ()), cfg.dictionaries, sens_cfg
            )
            k = decision.k
        k_hist[k] = k_hist.get(k, 0) + 1
        stream.append((user, record.terms))
        pool = [text for owner, text in pool_all if owner != user]
        if k > 0 and pool:
            for text in rng.sample(pool, min(k, len(pool))):
                stream.append((None, normalize(text)))

    reidentified = 0
    real_count = 0
    per_user: dict[str, dict] = {}
    verdicts: list[tuple[str | None, str | None]] = []
    for author, terms in stream:
        verdict = reidentify(terms, index, cfg.alpha, cfg.threshold)
        if cfg.online_adversary and verdict is not None:
            index.absorb(verdict, terms)
        verdicts.append((author, verdict))
        if author is not None:
            real_count += 1
            entry = per_user.setdefault(author, {"queries": 0, "reidentified": 0})
            entry["queries"] += 1
            if verdict == author:
                reidentified += 1
                entry["reidentified"] += 1
    return AttackOutcome(
        mechanism=mechanism,
        attacked=len(stream),
        real_queries=real_count,
        reidentified=reidentified,
        rate=reidentified / len(stream),
        k_histogram=k_hist,
        per_user=per_user,
        verdicts=verdicts,
    )


# ---------------------------------------------------------------------------
# metric families
# ---------------------------------------------------------------------------


def precision_recall(detected: set, truth: set) -> tuple[float, float]:
    """Categorizer quality: fraction of flagged queries that are truly
    sensitive, and fraction of truly sensitive queries that were flagged."""
    hit = len(detected & truth)
    if detected:
        precision = hit / len(detected)
    else:
        precision = 1.0 if not truth else 0.0
    recall = hit / len(truth) if truth else 1.0
    return precision, recall


def correctness_completeness(
    original_urls: set[str], returned_urls: set[str]
) -> tuple[float, float]:
    """Result accuracy: fraction of returned results that are genuine, and
    fraction of genuine results that were returned."""
    hit = len(original_urls & returned_urls)
    if returned_urls:
        correctness = hit / len(returned_urls)
    else:
        correctness = 1.0 if not original_urls else 0.0
    completeness = hit / len(original_urls) if original_urls else 1.0
    return correctness, completeness


# ---------------------------------------------------------------------------
# synthetic workloads
# ---------------------------------------------------------------------------


def generate_synthetic_log(
    users: int = 50,
    queries_per_user: int = 30,
    vocab_overlap: float = 0.5,
    repeat_fraction: float = 0.45,
    sensitive_fraction: float = 0.0,
    sensitive_terms: tuple[str, ...] = (),
    fresh_fraction: float = 0.0,
    shared_vocab: int = 150,
    private_vocab: int = 10,
    seed: int = 0,
) -> QueryLog:
    """A log with controllable linkability structure.

    Each user owns a private vocabulary plus access to a shared pool;
    every query term comes from the shared pool with probability
    ``vocab_overlap``. Users re-issue one of their earlier queries with
    probability ``repeat_fraction``, which is what makes profiles linkable
    at all (real logs are heavily repetitive). ``sensitive_fraction`` of
    fresh compositions get one term from ``sensitive_terms`` injected;
    ``fresh_fraction`` are built from never-reused tokens and therefore
    carry zero linkability by construction.
    """
    if sensitive_fraction > 0 and not sensitive_terms:
        raise ValueError("sensitive_fraction needs sensitive_terms")
    rng = random.Random(seed)
    shared = [f"common{i:03d}" for i in range(shared_vocab)]
    records: list[tuple[str, str, int]] = []
    fresh_counter = 0
    for u in range(users):
        user_id = f"user{u:03d}"
        private = [f"u{u:03d}p{j:02d}" for j in range(private_vocab)]
        repeatable: list[str] = []
        for q in range(queries_per_user):
            roll = rng.random()
            if roll < fresh_fraction:
                fresh_counter += 1
                text = " ".join(
                    f"fresh{fresh_counter:06d}x{j}" for j in range(rng.randint(2, 4))
                )
            elif repeatable and rng.random() < repeat_fraction:
                text = rng.choice(repeatable)
            else:
                terms = []
                for _ in range(rng.randint(3, 5)):
                    pool = shared if rng.random() < vocab_overlap else private
                    terms.append(rng.choice(pool))
                if rng.random() < sensitive_fraction:
                    terms.append(rng.choice(list(sensitive_terms)))
                text = " ".join(terms)
                repeatable.append(text)
            ts = 1_600_000_000_000 + (q * users + u) * 60_000
            records.append((user_id, text, ts))
    return QueryLog(records, "synthetic")


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def write_report_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report_csv(path: str, rows: list[dict]) -> None:
    if not rows:
        raise ValueError("no rows to write")
    fields = sorted({key for row in rows for key in row})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
