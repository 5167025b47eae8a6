"""Decentralized private web search with adaptive fake-query obfuscation."""

from veilsearch.core import (
    Origin,
    ProtectionDecision,
    QueryRecord,
    SearchResult,
    TermVector,
    TopicDictionary,
    UserProfile,
    cosine,
    normalize,
)

__version__ = "0.1.0"

__all__ = [
    "Origin",
    "ProtectionDecision",
    "QueryRecord",
    "SearchResult",
    "TermVector",
    "TopicDictionary",
    "UserProfile",
    "cosine",
    "normalize",
    "__version__",
]
