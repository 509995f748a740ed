"""Interchangeable Hamming-space search backends."""

from .base import MatchResult, QueryResult, SearchIndex
from .bf import BruteForceIndex
from .bof import BofIndex, Vocabulary, bow_transform, l1_similarity
from .bst import BstIndex
from .lsh import LshIndex

__all__ = [
    "MatchResult",
    "QueryResult",
    "SearchIndex",
    "BruteForceIndex",
    "BstIndex",
    "LshIndex",
    "BofIndex",
    "Vocabulary",
    "create_index",
]


def create_index(backend: str, **kwargs) -> SearchIndex:
    """Build a search backend by name: bf, lsh, bst, or bof."""
    backends = {
        "bf": BruteForceIndex,
        "lsh": LshIndex,
        "bst": BstIndex,
        "bof": BofIndex,
    }
    if backend not in backends:
        raise ValueError(
            f"unknown backend {backend!r}; expected one of {sorted(backends)}"
        )
    return backends[backend](**kwargs)
