from __future__ import annotations

import enum
import hashlib
import logging
import threading
from collections.abc import Iterable
from dataclasses import dataclass, field
from functools import cached_property

from . import bvlogic as bl
from .bvlogic import Conjunction, Side, Term, Var
from .errors import BackendError, DomainTooLarge, NotMatched, ShapeMismatch, SolverFailure
from .ledger import DecidedBy, StatsLedger
from .multistate import MultiState, Sliced, match_states, p_vars
from .progmodel import ProgVar
from .querycache import CacheKey, QueryCache
from .solverbridge import SatResult, SolverSession


LOG = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EqualityQuery:
    """notsubseteq: satisfiable iff some valuation of left is absent from right."""

    left: Conjunction
    right: Conjunction
    diff_vars: tuple[tuple[Var, Var], ...]

    @cached_property
    def canonical(self) -> bytes:
        h = hashlib.sha1()
        h.update(self.left.key)
        h.update(self.right.key)
        for a, b in self.diff_vars:
            h.update(repr((a.sort_key, b.sort_key)).encode("ascii"))
        return h.digest()

    @cached_property
    def body(self) -> Term:
        differs = bl.or_(*(bl.ne(a, b) for a, b in self.diff_vars))
        # a right diff variable the right side never mentions is still universal
        bound = self.right.free_var_terms | {b for _, b in self.diff_vars}
        escape = bl.forall(bound, bl.implies(self.right.as_term(), differs))
        return bl.and_(*self.left.clauses, escape)


class Outcome(enum.Enum):
    EQUAL = "equal"
    NOT_EQUAL = "not_equal"
    EMPTY = "empty"
    NON_EMPTY = "non_empty"


@dataclass(frozen=True)
class CheckOutcome:
    result: Outcome
    decided_by: DecidedBy


# Query construction


def _pad(a: MultiState, b: MultiState) -> tuple[MultiState, MultiState]:
    """Give every live symbolic variable represented on one side a vacuous first generation on the other."""

    def missing(s: MultiState, other: MultiState) -> list[ProgVar]:
        return [pv for pv in s.live_symbolic() if s.gens.get(pv, 0) == 0 and other.gens.get(pv, 0) > 0]

    def padded(s: MultiState, pvs: list[ProgVar]) -> MultiState:
        if not pvs:
            return s
        gens = dict(s.gens)
        clauses = []
        for pv in pvs:
            gens[pv] = 1
            clauses.append(bl.vacuous_equality(s.var(pv, 1)))
        return MultiState(s.control, s.shape, s.symbolic.conjoin(Conjunction(tuple(clauses))), gens, s.error)

    return padded(a, missing(a, b)), padded(b, missing(b, a))


def _diff_vars(a: MultiState, b: MultiState, scope: Iterable[ProgVar] | None = None) -> tuple[tuple[Var, Var], ...]:
    live = [pv for pv in a.live_symbolic() if a.gens.get(pv, 0) > 0]
    if scope is not None:
        wanted = set(scope)
        live = [pv for pv in live if pv in wanted]
    pairs = []
    for pv in live:
        left = a.var(pv, a.gens[pv])
        right = b.var(pv, b.gens[pv])
        pairs.append((left, bl.Var(right.var.with_side(Side.RIGHT), right.sort)))
    return tuple(pairs)


def _check_shapes(s1: MultiState, s2: MultiState) -> None:
    if s1.control != s2.control or s1.shape != s2.shape:
        raise ShapeMismatch("states differ in their explicit parts")


def build_not_subseteq(s1: MultiState, s2: MultiState) -> EqualityQuery:
    _check_shapes(s1, s2)
    s1, s2 = _pad(s1, s2)
    return EqualityQuery(
        s1.symbolic.as_conjunction(),
        s2.symbolic.as_conjunction().retag(Side.RIGHT),
        _diff_vars(s1, s2),
    )


def _slice_query(
    s1: MultiState, s2: MultiState, phi: Conjunction, psi: Conjunction
) -> EqualityQuery:
    scope = p_vars(phi) | p_vars(psi)
    return EqualityQuery(phi, psi.retag(Side.RIGHT), _diff_vars(s1, s2, scope))


def build_not_subseteq_slice(s1: MultiState, s2: MultiState, i: int) -> EqualityQuery:
    """Query for part i of two matched sliced states.

    The universal binder covers the free variables of the right part only.
    """
    _check_shapes(s1, s2)
    if not (isinstance(s1.symbolic, Sliced) and isinstance(s2.symbolic, Sliced)):
        raise NotMatched("per-slice queries need sliced states")
    a, b = s1.parts, s2.parts
    if len(a) != len(b) or any(p_vars(x) and p_vars(y) and p_vars(x) != p_vars(y) for x, y in zip(a, b)):
        raise NotMatched("parts are not matched")
    if not 0 <= i < len(a):
        raise NotMatched(f"part index {i} out of range 0..{len(a) - 1}")
    return _slice_query(s1, s2, a[i], b[i])


# Decision pipeline


@dataclass(frozen=True)
class CheckerConfig:
    syntactic: bool = True
    cache: bool = True
    revalidate_every: int = 0

    def __post_init__(self) -> None:
        if self.revalidate_every < 0:
            raise ValueError("revalidate_every must be >= 0")


@dataclass
class EqualityChecker:
    """Owns one solver session, an optional cache and the run ledger.

    Every query goes through syntactic comparison, then the cache, then the
    solver, and is counted under the first layer that settles it.
    """

    session: SolverSession
    cache: QueryCache | None = None
    ledger: StatsLedger = field(default_factory=StatsLedger)
    config: CheckerConfig = field(default_factory=CheckerConfig)
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)
    _revalidation_tick: int = field(default=0, init=False, repr=False)

    def _solve(self, obj: Conjunction | EqualityQuery) -> SatResult:
        try:
            result = self.session.check(obj)
        except (BackendError, DomainTooLarge) as e:
            raise SolverFailure(f"solver failed: {e}") from e
        if result is SatResult.UNKNOWN:
            raise SolverFailure("solver answered unknown")
        return result

    def _decide(self, key: CacheKey, obj: Conjunction | EqualityQuery) -> tuple[SatResult, DecidedBy]:
        if self.cache is not None and self.config.cache:
            hit = self.cache.lookup(key)
            if hit is not None:
                self._maybe_revalidate(key, obj, hit)
                return hit, DecidedBy.CACHE
        result = self._solve(obj)
        if self.cache is not None and self.config.cache:
            self.cache.insert(key, result)
        return result, DecidedBy.SOLVER

    def _maybe_revalidate(self, key: CacheKey, obj: Conjunction | EqualityQuery, cached: SatResult) -> None:
        n = self.config.revalidate_every
        if not n:
            return
        self._revalidation_tick += 1
        if self._revalidation_tick % n:
            return
        fresh = self._solve(obj)
        if fresh is not cached:
            LOG.warning("Cache revalidation mismatch for %s query: cached %s, solver %s", key.kind.value, cached, fresh)
            raise SolverFailure(f"cached verdict {cached} contradicts solver verdict {fresh}")

    # emptiness

    def emptiness(self, state: MultiState, known_nonempty: Iterable[bytes] = ()) -> CheckOutcome:
        """Empty iff some part is unsatisfiable; stops at the first one.

        Parts whose key is in known_nonempty (typically the parent's parts)
        are not queried.
        """
        known = set(known_nonempty)
        worst = DecidedBy.SYNTACTIC
        with self._lock:
            for part in state.parts:
                if part.is_top or part.key in known:
                    continue
                result, by = self._decide(CacheKey.emptiness(part), part)
                self.ledger.record_emptiness_query(by)
                worst = max(worst, by)
                if result is SatResult.UNSAT:
                    LOG.debug("Empty state: part %s unsatisfiable (%s)", part, by.name.lower())
                    return CheckOutcome(Outcome.EMPTY, worst)
        return CheckOutcome(Outcome.NON_EMPTY, worst)

    def is_empty(self, state: MultiState, known_nonempty: Iterable[bytes] = ()) -> bool:
        return self.emptiness(state, known_nonempty).result is Outcome.EMPTY

    # equality

    def equal_states(self, s1: MultiState, s2: MultiState) -> CheckOutcome:
        """Both states must share their explicit part and be non-empty."""
        _check_shapes(s1, s2)
        s1, s2 = _pad(s1, s2)
        if isinstance(s1.symbolic, Sliced) and isinstance(s2.symbolic, Sliced):
            m1, m2 = match_states(s1, s2)
            pairs = list(zip(m1.parts, m2.parts))
        else:
            pairs = [(s1.symbolic.as_conjunction(), s2.symbolic.as_conjunction())]

        worst = DecidedBy.SYNTACTIC
        with self._lock:
            for i, (phi, psi) in enumerate(pairs):
                for direction, (x, y, sx, sy) in enumerate(((phi, psi, s1, s2), (psi, phi, s2, s1))):
                    result, by = self._decide_subset(sx, sy, x, y)
                    self.ledger.record_equality_query(by)
                    worst = max(worst, by)
                    if result is SatResult.SAT:
                        LOG.debug("Not equal at part %d direction %d (%s)", i, direction + 1, by.name.lower())
                        return CheckOutcome(Outcome.NOT_EQUAL, worst)
        return CheckOutcome(Outcome.EQUAL, worst)

    def _decide_subset(
        self, sx: MultiState, sy: MultiState, x: Conjunction, y: Conjunction
    ) -> tuple[SatResult, DecidedBy]:
        query = _slice_query(sx, sy, x, y)
        if self.config.syntactic and x.key == y.key and _same_generations(query):
            return SatResult.UNSAT, DecidedBy.SYNTACTIC
        return self._decide(CacheKey.not_subseteq(query.canonical), query)


def _same_generations(q: EqualityQuery) -> bool:
    return all(a.var == b.var.with_side(Side.LEFT) for a, b in q.diff_vars)
