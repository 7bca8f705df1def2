from __future__ import annotations

import enum
import logging
import time
from collections import deque
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field

from .eqcheck import CheckerConfig, EqualityChecker, Outcome
from .ledger import StatsLedger
from .multistate import MultiState, StoreKind, apply_instruction, enabled_steps, initial_state
from .progmodel import Program, describe
from .querycache import DEFAULT_CAPACITY, QueryCache
from .solverbridge import BackendConfig, EnumerationBackend, solver_session


LOG = logging.getLogger(__name__)

__all__ = [
    "ExploreConfig",
    "Explorer",
    "SearchOrder",
    "SeenIndex",
    "StoreKind",
    "TraceStep",
    "Verdict",
    "VerdictKind",
    "explore",
    "replay_trace",
]


class SearchOrder(enum.Enum):
    BFS = "bfs"
    DFS = "dfs"


@dataclass(frozen=True)
class ExploreConfig:
    store: StoreKind = StoreKind.SLICED
    cache_enabled: bool = True
    backend: BackendConfig = field(default_factory=EnumerationBackend)
    max_states: int = 10**6
    search_order: SearchOrder = SearchOrder.BFS
    syntactic: bool = True
    revalidate_every: int = 0
    cache_capacity: int = DEFAULT_CAPACITY

    def __post_init__(self) -> None:
        if self.max_states < 1:
            raise ValueError(f"max_states must be >= 1, got {self.max_states}")

    @property
    def checker(self) -> CheckerConfig:
        return CheckerConfig(
            syntactic=self.syntactic,
            cache=self.cache_enabled,
            revalidate_every=self.revalidate_every,
        )


@dataclass(frozen=True)
class TraceStep:
    thread: int
    pc: int
    function: str

    def as_dict(self) -> dict[str, int | str]:
        return {"thread": self.thread, "function": self.function, "pc": self.pc}


class VerdictKind(enum.Enum):
    SAFE = "safe"
    ASSERT_FAIL = "assert_fail"
    EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    trace: tuple[TraceStep, ...] = ()
    max_states: int | None = None

    @classmethod
    def safe(cls) -> Verdict:
        return cls(VerdictKind.SAFE)

    @classmethod
    def assert_fail(cls, trace: Sequence[TraceStep]) -> Verdict:
        return cls(VerdictKind.ASSERT_FAIL, tuple(trace))

    @classmethod
    def exhausted(cls, max_states: int) -> Verdict:
        return cls(VerdictKind.EXHAUSTED, max_states=max_states)

    def __str__(self) -> str:
        return self.kind.value


class SeenIndex:
    """Stored states bucketed by explicit part, insertion order kept per bucket."""

    def __init__(self) -> None:
        self._buckets: dict[tuple, list[MultiState]] = {}
        self._count = 0

    def put(self, state: MultiState) -> None:
        self._buckets.setdefault(state.explicit_key, []).append(state)
        self._count += 1

    def candidates(self, key: tuple) -> list[MultiState]:
        return self._buckets.get(key, [])

    def __len__(self) -> int:
        return self._count

    def __iter__(self) -> Iterator[MultiState]:
        for bucket in self._buckets.values():
            yield from bucket

    @property
    def bucket_count(self) -> int:
        return len(self._buckets)


@dataclass
class _Node:
    state: MultiState
    parent: _Node | None = None
    step: TraceStep | None = None

    def trace(self) -> list[TraceStep]:
        steps: list[TraceStep] = []
        node: _Node | None = self
        while node is not None and node.step is not None:
            steps.append(node.step)
            node = node.parent
        return steps[::-1]


class Explorer:
    def __init__(self, program: Program, cfg: ExploreConfig, checker: EqualityChecker) -> None:
        self.program = program
        self.cfg = cfg
        self.checker = checker
        self.seen = SeenIndex()

    @property
    def ledger(self) -> StatsLedger:
        return self.checker.ledger

    def run(self) -> Verdict:
        start = time.perf_counter()
        try:
            return self._search()
        finally:
            self.ledger.wall_time_ms = (time.perf_counter() - start) * 1000.0

    def _search(self) -> Verdict:
        ledger = self.ledger
        root = _Node(initial_state(self.program, self.cfg.store))
        self.seen.put(root.state)
        ledger.states_stored += 1
        work: deque[_Node] = deque([root])
        pop = work.popleft if self.cfg.search_order is SearchOrder.BFS else work.pop

        while work:
            node = pop()
            state = node.state
            parent_parts = [p.key for p in state.parts]
            for thread, instr in enabled_steps(self.program, state):
                frame = state.control.top(thread)
                step = TraceStep(thread, frame.pc, frame.function)
                for succ in apply_instruction(self.program, state, thread, instr):
                    ledger.states_generated += 1
                    if self.checker.is_empty(succ, parent_parts):
                        ledger.states_empty += 1
                        continue
                    child = _Node(succ, node, step)
                    if succ.error:
                        LOG.info("Assertion failure reachable at %s", describe(self.program, frame))
                        return Verdict.assert_fail(child.trace())
                    if self._known(succ):
                        ledger.states_deduplicated += 1
                        continue
                    if len(self.seen) >= self.cfg.max_states:
                        LOG.info("State cap %d reached", self.cfg.max_states)
                        return Verdict.exhausted(self.cfg.max_states)
                    self.seen.put(succ)
                    ledger.states_stored += 1
                    work.append(child)
                    LOG.debug("Stored state %d: %s", len(self.seen), succ.control)
        return Verdict.safe()

    def _known(self, state: MultiState) -> bool:
        """True if some stored state with the same explicit part equals state."""
        for old in self.seen.candidates(state.explicit_key):
            if self.checker.equal_states(state, old).result is Outcome.EQUAL:
                return True
        return False


def explore(
    program: Program, cfg: ExploreConfig | None = None, *, cache: QueryCache | None = None
) -> tuple[Verdict, StatsLedger]:
    cfg = cfg or ExploreConfig()
    if cache is None and cfg.cache_enabled:
        cache = QueryCache(cfg.cache_capacity)
    with solver_session(cfg.backend) as session:
        checker = EqualityChecker(session, cache, StatsLedger(), cfg.checker)
        explorer = Explorer(program, cfg, checker)
        verdict = explorer.run()
    LOG.info("Verdict %s after %d stored states", verdict, explorer.ledger.states_stored)
    return verdict, explorer.ledger


def replay_trace(
    program: Program,
    trace: Sequence[TraceStep],
    store: StoreKind = StoreKind.SLICED,
    backend: BackendConfig | None = None,
) -> list[MultiState]:
    """Execute trace from the initial state; return the non-empty error states it reaches."""
    with solver_session(backend or EnumerationBackend()) as session:
        checker = EqualityChecker(session, None, StatsLedger(), CheckerConfig(cache=False))
        frontier = [initial_state(program, store)]
        for step in trace:
            nxt: list[MultiState] = []
            for state in frontier:
                if state.error:
                    continue
                for thread, instr in enabled_steps(program, state):
                    frame = state.control.top(thread)
                    if (thread, frame.pc, frame.function) != (step.thread, step.pc, step.function):
                        continue
                    nxt.extend(s for s in apply_instruction(program, state, thread, instr) if not checker.is_empty(s))
            frontier = nxt
        return [s for s in frontier if s.error]
