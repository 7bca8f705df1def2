from __future__ import annotations

import enum
from dataclasses import asdict, dataclass


class DecidedBy(enum.IntEnum):
    """Which pipeline layer settled a query. Ordered by cost."""

    SYNTACTIC = 0
    CACHE = 1
    SOLVER = 2


@dataclass
class StatsLedger:
    """Run counters.

    Every equality-pipeline query lands in exactly one of syntactic_equal,
    cache_hits and solver_calls; equal_checks counts them all.
    """

    equal_checks: int = 0
    syntactic_equal: int = 0
    cache_hits: int = 0
    solver_calls: int = 0
    emptiness_checks: int = 0
    emptiness_cache_hits: int = 0
    emptiness_solver_calls: int = 0
    states_generated: int = 0
    states_stored: int = 0
    states_deduplicated: int = 0
    states_empty: int = 0
    wall_time_ms: float = 0.0

    def record_equality_query(self, decided_by: DecidedBy) -> None:
        self.equal_checks += 1
        if decided_by is DecidedBy.SYNTACTIC:
            self.syntactic_equal += 1
        elif decided_by is DecidedBy.CACHE:
            self.cache_hits += 1
        else:
            self.solver_calls += 1

    def record_emptiness_query(self, decided_by: DecidedBy) -> None:
        self.emptiness_checks += 1
        if decided_by is DecidedBy.CACHE:
            self.emptiness_cache_hits += 1
        elif decided_by is DecidedBy.SOLVER:
            self.emptiness_solver_calls += 1

    @property
    def conserved(self) -> bool:
        return self.equal_checks == self.syntactic_equal + self.cache_hits + self.solver_calls

    def as_dict(self) -> dict[str, int | float]:
        return asdict(self)
