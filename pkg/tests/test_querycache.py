from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import pytest

from cedsmc_app import bvlogic as bl
from cedsmc_app.bvlogic import Conjunction, VarId
from cedsmc_app.ledger import DecidedBy, StatsLedger
from cedsmc_app.querycache import CacheKey, CacheStats, QueryCache, QueryKind
from cedsmc_app.solverbridge import SatResult

X = bl.var(VarId(0, 0, 1), 4)
Y = bl.var(VarId(0, 1, 1), 4)


def _key(n: int) -> CacheKey:
    return CacheKey.emptiness(Conjunction((bl.eq(X, bl.const(n, 4)),)))


def test_keys_ignore_clause_order():
    a, b = bl.eq(X, Y), bl.ule(X, bl.const(3, 4))
    assert CacheKey.emptiness(Conjunction((a, b))) == CacheKey.emptiness(Conjunction((b, a)))
    assert CacheKey.emptiness(Conjunction((a,))) != CacheKey.not_subseteq(Conjunction((a,)).key)
    assert CacheKey.not_subseteq(b"k").kind is QueryKind.NOT_SUBSETEQ


def test_lookup_and_insert():
    cache = QueryCache()
    assert cache.lookup(_key(1)) is None
    cache.insert(_key(1), SatResult.SAT)
    assert cache.lookup(_key(1)) is SatResult.SAT
    assert _key(1) in cache
    assert cache.stats() == CacheStats(hits=1, misses=1, entries=1, evictions=0)
    assert cache.stats().lookups == 2


def test_least_recently_used_entry_is_evicted():
    cache = QueryCache(capacity=2)
    cache.insert(_key(1), SatResult.SAT)
    cache.insert(_key(2), SatResult.UNSAT)
    cache.lookup(_key(1))
    cache.insert(_key(3), SatResult.SAT)
    assert _key(1) in cache
    assert _key(2) not in cache
    assert len(cache) == 2
    assert cache.stats().evictions == 1


def test_unknown_is_not_cacheable():
    with pytest.raises(ValueError):
        QueryCache().insert(_key(1), SatResult.UNKNOWN)


def test_changed_verdict_is_rejected():
    cache = QueryCache()
    cache.insert(_key(1), SatResult.SAT)
    cache.insert(_key(1), SatResult.SAT)
    with pytest.raises(ValueError):
        cache.insert(_key(1), SatResult.UNSAT)


def test_capacity_must_be_positive():
    with pytest.raises(ValueError):
        QueryCache(0)


def test_stats_as_dict():
    assert CacheStats(1, 2, 3, 4).as_dict() == {"hits": 1, "misses": 2, "entries": 3, "evictions": 4}


def test_ledger_buckets():
    ledger = StatsLedger()
    for by in (DecidedBy.SYNTACTIC, DecidedBy.CACHE, DecidedBy.SOLVER, DecidedBy.SOLVER):
        ledger.record_equality_query(by)
    ledger.record_emptiness_query(DecidedBy.CACHE)
    assert (ledger.equal_checks, ledger.syntactic_equal, ledger.cache_hits, ledger.solver_calls) == (4, 1, 1, 2)
    assert (ledger.emptiness_checks, ledger.emptiness_cache_hits) == (1, 1)
    assert ledger.conserved

    ledger.solver_calls += 1
    assert not ledger.conserved
    assert ledger.as_dict()["solver_calls"] == 3


def test_concurrent_readers_and_writers():
    cache = QueryCache(capacity=64)
    keys = [_key(n) for n in range(16)]

    def work(offset: int) -> None:
        for i in range(200):
            key = keys[(i + offset) % len(keys)]
            if cache.lookup(key) is None:
                cache.insert(key, SatResult.SAT)
            assert key in cache
            assert 1 <= len(cache) <= len(keys)

    with ThreadPoolExecutor(max_workers=4) as pool:
        list(pool.map(work, range(4)))

    assert len(cache) == len(keys)
    assert all(k in cache for k in keys)
    assert cache.stats().lookups == 800
