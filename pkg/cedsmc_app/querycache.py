from __future__ import annotations

import enum
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass

from .bvlogic import Conjunction
from .solverbridge import SatResult


LOG = logging.getLogger(__name__)

DEFAULT_CAPACITY = 2**20


class QueryKind(enum.Enum):
    EMPTINESS = "emptiness"
    NOT_SUBSETEQ = "not_subseteq"


@dataclass(frozen=True)
class CacheKey:
    kind: QueryKind
    digest: bytes

    @classmethod
    def emptiness(cls, c: Conjunction) -> CacheKey:
        return cls(QueryKind.EMPTINESS, c.key)

    @classmethod
    def not_subseteq(cls, canonical: bytes) -> CacheKey:
        return cls(QueryKind.NOT_SUBSETEQ, canonical)


@dataclass(frozen=True)
class CacheStats:
    hits: int = 0
    misses: int = 0
    entries: int = 0
    evictions: int = 0

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    def as_dict(self) -> dict[str, int]:
        return {
            "hits": self.hits,
            "misses": self.misses,
            "entries": self.entries,
            "evictions": self.evictions,
        }


class QueryCache:
    """LRU map from canonical query keys to Sat/Unsat verdicts.

    Keys are computed before any solver-specific serialization, so one cache
    serves every backend and both store kinds.
    """

    def __init__(self, capacity: int = DEFAULT_CAPACITY) -> None:
        if capacity < 1:
            raise ValueError(f"cache capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._entries: OrderedDict[CacheKey, SatResult] = OrderedDict()
        self._lock = threading.Lock()
        self._hits = 0
        self._misses = 0
        self._evictions = 0

    def lookup(self, key: CacheKey) -> SatResult | None:
        """Return the stored verdict, or None on a miss."""
        with self._lock:
            result = self._entries.get(key)
            if result is None:
                self._misses += 1
                return None
            self._entries.move_to_end(key)
            self._hits += 1
            return result

    def insert(self, key: CacheKey, result: SatResult) -> None:
        if result not in (SatResult.SAT, SatResult.UNSAT):
            raise ValueError(f"only sat/unsat verdicts are cacheable, got {result}")
        with self._lock:
            previous = self._entries.get(key)
            if previous is not None and previous is not result:
                raise ValueError(f"verdict for {key.kind.value} query changed: {previous} -> {result}")
            self._entries[key] = result
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                evicted, _ = self._entries.popitem(last=False)
                self._evictions += 1
                LOG.debug("Evicted %s cache entry", evicted.kind.value)

    def stats(self) -> CacheStats:
        with self._lock:
            return CacheStats(self._hits, self._misses, len(self._entries), self._evictions)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)

    def __contains__(self, key: object) -> bool:
        with self._lock:
            return key in self._entries
