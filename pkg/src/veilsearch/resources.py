"""Access to the data files shipped inside the package."""

from __future__ import annotations

from importlib import resources

from veilsearch.core import TopicDictionary, normalize

_DATA = resources.files("veilsearch") / "data"


def packaged_seed_queries() -> list[str]:
    text = (_DATA / "seed_queries.txt").read_text(encoding="utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


def packaged_corpus_path() -> str:
    return str(_DATA / "corpus.jsonl")


def packaged_dictionaries() -> dict[str, TopicDictionary]:
    dicts: dict[str, TopicDictionary] = {}
    root = _DATA / "dicts"
    for entry in sorted(root.iterdir(), key=lambda e: e.name):
        if not entry.name.endswith(".txt"):
            continue
        topic = entry.name[: -len(".txt")]
        terms: set[str] = set()
        for line in entry.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#"):
                terms.update(normalize(line))
        dicts[topic] = TopicDictionary(topic=topic, terms=frozenset(terms))
    return dicts
