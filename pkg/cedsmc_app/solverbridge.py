from __future__ import annotations

import enum
import graphlib
import logging
import os
import selectors
import subprocess
import sys
import time
from abc import ABC, abstractmethod
from collections import OrderedDict
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, runtime_checkable

import numpy as np

from .bvlogic import (
    Apply,
    Conjunction,
    Forall,
    Op,
    Term,
    Var,
    VarId,
    evaluate_vector,
    serialize_smtlib,
)
from .errors import BackendError, DomainTooLarge, SortError, SpawnFailure


LOG = logging.getLogger(__name__)

DEFAULT_TIMEOUT_MS = 60_000
DEFAULT_MAX_DOMAIN_BITS = 24

# Rows evaluated per numpy block (bound-variable lanes included).
CHUNK_BITS = 20
PROJECTION_MEMO_SIZE = 16


class SatResult(enum.Enum):
    SAT = "sat"
    UNSAT = "unsat"
    UNKNOWN = "unknown"

    def __str__(self) -> str:
        return self.value


def default_args(solver_path: str) -> tuple[str, ...]:
    """Flags that put a known solver into SMT-LIB stdin mode."""
    name = Path(solver_path).name.lower()
    if "z3" in name:
        return ("-in", "-smt2")
    if "cvc5" in name or "cvc4" in name:
        return ("--lang=smt2", "--incremental")
    if "yices" in name:
        return ("--incremental",)
    if "bitwuzla" in name or "boolector" in name:
        return ("--lang", "smt2")
    return ()


@dataclass(frozen=True)
class ExternalBackend:
    solver_path: str
    args: tuple[str, ...] | None = None
    timeout_ms: int = DEFAULT_TIMEOUT_MS

    def __post_init__(self) -> None:
        if not self.solver_path:
            raise ValueError("solver path is empty")
        if self.timeout_ms < 1:
            raise ValueError(f"timeout must be positive, got {self.timeout_ms} ms")
        if self.args is not None:
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def command(self) -> list[str]:
        args = self.args if self.args is not None else default_args(self.solver_path)
        return [self.solver_path, *args]

    @property
    def name(self) -> str:
        return "smtlib"


@dataclass(frozen=True)
class EnumerationBackend:
    max_domain_bits: int = DEFAULT_MAX_DOMAIN_BITS

    def __post_init__(self) -> None:
        if not 0 <= self.max_domain_bits <= 63:
            raise ValueError(f"max_domain_bits must be in [0, 63], got {self.max_domain_bits}")

    @property
    def name(self) -> str:
        return "enum"


BackendConfig = ExternalBackend | EnumerationBackend


@runtime_checkable
class ProjectionQuery(Protocol):
    """The shape of an equality query as the enumeration backend needs it."""

    left: Conjunction
    right: Conjunction
    diff_vars: tuple[tuple[Var, Var], ...]

    @property
    def body(self) -> Term: ...


Checkable = Conjunction | Term | ProjectionQuery


@dataclass
class SessionStats:
    queries: int = 0
    spawns: int = 0
    respawns: int = 0
    timeouts: int = 0
    projection_hits: int = 0


class SolverSession(ABC):
    stats: SessionStats

    @abstractmethod
    def check(self, obj: Checkable) -> SatResult:
        pass

    def close(self) -> None:
        pass

    def __enter__(self) -> SolverSession:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


# External SMT-LIB process


class _SolverDied(BackendError):
    pass


class SmtLibSession(SolverSession):
    """One persistent solver child process, `(reset)` between queries."""

    def __init__(self, cfg: ExternalBackend) -> None:
        self.cfg = cfg
        self.stats = SessionStats()
        self._proc: subprocess.Popen[bytes] | None = None
        self._buf = b""

    @property
    def pid(self) -> int | None:
        return self._proc.pid if self._proc is not None else None

    def check(self, obj: Checkable) -> SatResult:
        script = serialize_smtlib(obj)
        self.stats.queries += 1
        for attempt in range(2):
            if self._proc is None:
                self._spawn()
            elif self._proc.poll() is not None:
                LOG.warning("Solver exited with %s between queries; respawning", self._proc.returncode)
                self._discard()
                self.stats.respawns += 1
                self._spawn()
            try:
                return self._roundtrip(script)
            except _SolverDied as e:
                self._discard()
                if attempt:
                    raise BackendError(f"solver crashed again after respawn: {e}", raw=e.raw) from e
                LOG.warning("Solver died during a query (%s); respawning", e)
                self.stats.respawns += 1
        raise AssertionError("unreachable")

    def close(self) -> None:
        proc = self._proc
        if proc is None:
            return
        try:
            if proc.poll() is None and proc.stdin is not None:
                proc.stdin.write(b"(exit)\n")
                proc.stdin.flush()
                proc.wait(timeout=1.0)
        except (OSError, subprocess.TimeoutExpired):
            pass
        finally:
            self._discard()

    def _spawn(self) -> None:
        cmd = self.cfg.command
        LOG.debug("Spawning solver: %s", " ".join(cmd))
        try:
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
            )
        except OSError as e:
            raise SpawnFailure(f"cannot start solver {self.cfg.solver_path!r}: {e}") from e
        self._buf = b""
        self.stats.spawns += 1

    def _discard(self) -> None:
        proc, self._proc = self._proc, None
        self._buf = b""
        if proc is None:
            return
        if proc.poll() is None:
            proc.kill()
        try:
            proc.wait(timeout=1.0)
        except subprocess.TimeoutExpired:
            pass
        for stream in (proc.stdin, proc.stdout):
            if stream is not None:
                try:
                    stream.close()
                except OSError:
                    pass

    def _roundtrip(self, script: str) -> SatResult:
        self._write("(reset)\n" + script)
        deadline = time.monotonic() + self.cfg.timeout_ms / 1000.0
        while True:
            line = self._read_line(deadline)
            if line is None:
                LOG.warning("Solver timed out after %d ms", self.cfg.timeout_ms)
                self.stats.timeouts += 1
                self._discard()
                return SatResult.UNKNOWN
            answer = line.strip()
            if answer:
                break

        if answer in ("sat", "unsat", "unknown"):
            return SatResult(answer)
        self._discard()
        if answer.startswith("(error"):
            raise BackendError(f"solver reported an error: {answer}", raw=answer)
        raise BackendError(f"unexpected solver output: {answer!r}", raw=answer)

    def _write(self, text: str) -> None:
        assert self._proc is not None and self._proc.stdin is not None
        try:
            self._proc.stdin.write(text.encode("utf-8"))
            self._proc.stdin.flush()
        except OSError as e:
            raise _SolverDied(f"write failed: {e}") from e

    def _read_line(self, deadline: float) -> str | None:
        assert self._proc is not None and self._proc.stdout is not None
        fd = self._proc.stdout.fileno()
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_READ)
            while b"\n" not in self._buf:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not sel.select(remaining):
                    return None
                chunk = os.read(fd, 4096)
                if not chunk:
                    raw = self._buf.decode("utf-8", errors="replace")
                    raise _SolverDied("solver closed its output", raw=raw)
                self._buf += chunk
        line, _, self._buf = self._buf.partition(b"\n")
        return line.decode("utf-8", errors="replace")


# Enumeration oracle


def _width_mask(width: int) -> np.uint64:
    return np.uint64((1 << width) - 1)


def _reaches(defs: dict[VarId, Term], start: Iterable[VarId], target: VarId) -> bool:
    stack = list(start)
    seen: set[VarId] = set()
    while stack:
        v = stack.pop()
        if v == target:
            return True
        if v in seen:
            continue
        seen.add(v)
        if v in defs:
            stack.extend(defs[v].free_vars)
    return False


def _definitions(c: Conjunction) -> tuple[dict[VarId, Term], list[VarId], set[int]]:
    """Pick acyclic defining equalities v = e (v not free in e).

    Returns the definitions, an evaluation order and the indices of the
    clauses consumed as definitions.
    """
    defs: dict[VarId, Term] = {}
    used: set[int] = set()
    for i, clause in enumerate(c.clauses):
        if not (isinstance(clause, Apply) and clause.op is Op.EQ):
            continue
        lhs, rhs = clause.args
        for target, expr in ((lhs, rhs), (rhs, lhs)):
            if not isinstance(target, Var) or target.var in defs:
                continue
            if target.var in expr.free_vars or _reaches(defs, expr.free_vars, target.var):
                continue
            defs[target.var] = expr
            used.add(i)
            break

    graph = {k: [d for d in e.free_vars if d in defs] for k, e in defs.items()}
    order = list(graphlib.TopologicalSorter(graph).static_order())
    return defs, order, used


def _lanes(
    c: Conjunction, extra: Iterable[Var], cap: int
) -> Iterator[tuple[dict[VarId, np.ndarray], np.ndarray]]:
    """Yield (env, mask) blocks covering every model of c.

    Only variables without a definition are enumerated; extra variables are
    included as unconstrained inputs when c does not mention them.
    """
    variables = {v.var: v for v in c.free_var_terms}
    for v in extra:
        variables.setdefault(v.var, v)

    defs, order, used = _definitions(c)
    inputs = sorted((v for k, v in variables.items() if k not in defs), key=lambda v: v.var)
    bits = sum(v.sort.width for v in inputs)
    if bits > cap:
        raise DomainTooLarge(bits, cap)
    checks = [cl for i, cl in enumerate(c.clauses) if i not in used]

    total = 1 << bits
    step = 1 << min(bits, CHUNK_BITS)
    for start in range(0, total, step):
        idx = np.arange(start, min(start + step, total), dtype=np.uint64)
        env: dict[VarId, np.ndarray] = {}
        offset = 0
        for v in inputs:
            env[v.var] = (idx >> np.uint64(offset)) & _width_mask(v.sort.width)
            offset += v.sort.width
        for k in order:
            env[k] = np.broadcast_to(evaluate_vector(defs[k], env), idx.shape)

        mask = np.ones(idx.shape, dtype=bool)
        for clause in checks:
            mask &= np.broadcast_to(evaluate_vector(clause, env), idx.shape)
            if not mask.any():
                break
        yield env, mask


def _bound_bits(t: Term) -> int:
    if isinstance(t, Forall):
        return sum(b.sort.width for b in t.bound) + _bound_bits(t.body)
    if isinstance(t, Apply):
        return sum(_bound_bits(a) for a in t.args)
    return 0


@dataclass
class _Projection:
    """Distinct diff-variable tuples over the models of one side."""

    packed: np.ndarray | None = None
    wide: set[tuple[int, ...]] = field(default_factory=set)


def _keys(env: dict[VarId, np.ndarray], mask: np.ndarray, cols: Sequence[Var]) -> np.ndarray:
    key = np.zeros(int(mask.sum()), dtype=np.uint64)
    offset = 0
    for v in cols:
        lane = np.broadcast_to(env[v.var], mask.shape)[mask]
        key |= lane << np.uint64(offset)
        offset += v.sort.width
    return key


def _rows(env: dict[VarId, np.ndarray], mask: np.ndarray, cols: Sequence[Var]) -> Iterator[tuple[int, ...]]:
    columns = [np.broadcast_to(env[v.var], mask.shape)[mask].tolist() for v in cols]
    return zip(*columns)


class EnumerationSession(SolverSession):
    """Exact decision procedure by exhaustive enumeration at small widths.

    The domain cap counts the enumerated (non-defined) bits of one search.
    Conjunctions and plain terms are checked against it as a whole; an
    equality query enumerates each side separately, so the cap applies to
    the left side and to the right side on their own, not to their sum.
    Exceeding it raises DomainTooLarge.
    """

    def __init__(self, cfg: EnumerationBackend | None = None) -> None:
        self.cfg = cfg or EnumerationBackend()
        self.stats = SessionStats()
        self._projections: OrderedDict[tuple, _Projection] = OrderedDict()

    def check(self, obj: Checkable) -> SatResult:
        self.stats.queries += 1
        if isinstance(obj, Conjunction):
            return self.check_conjunction(obj)
        if isinstance(obj, Term):
            return self.check_term(obj)
        if isinstance(obj, ProjectionQuery):
            return self.check_projection(obj)
        raise TypeError(f"cannot decide {type(obj).__name__}")

    def check_conjunction(self, c: Conjunction) -> SatResult:
        for _, mask in _lanes(c, (), self.cfg.max_domain_bits):
            if mask.any():
                return SatResult.SAT
        return SatResult.UNSAT

    def check_term(self, term: Term) -> SatResult:
        if not term.sort.is_bool:
            raise SortError("only Boolean terms can be decided")
        free = sorted(term.free_var_terms, key=lambda v: v.var)
        free_bits = sum(v.sort.width for v in free)
        bound_bits = _bound_bits(term)
        if free_bits + bound_bits > self.cfg.max_domain_bits:
            raise DomainTooLarge(free_bits + bound_bits, self.cfg.max_domain_bits)

        total = 1 << free_bits
        step = 1 << max(0, min(free_bits, CHUNK_BITS - bound_bits))
        for start in range(0, total, step):
            idx = np.arange(start, min(start + step, total), dtype=np.uint64)
            env: dict[VarId, np.ndarray] = {}
            offset = 0
            for v in free:
                env[v.var] = (idx >> np.uint64(offset)) & _width_mask(v.sort.width)
                offset += v.sort.width
            if np.broadcast_to(evaluate_vector(term, env), idx.shape).any():
                return SatResult.SAT
        return SatResult.UNSAT

    def check_projection(self, q: ProjectionQuery) -> SatResult:
        """Sat iff some left model projects outside the right projection set."""
        cap = self.cfg.max_domain_bits
        left_cols = [pair[0] for pair in q.diff_vars]
        right_cols = [pair[1] for pair in q.diff_vars]
        packed = sum(v.sort.width for v in left_cols) <= 64

        right = self._projection(q.right, right_cols, packed)
        for env, mask in _lanes(q.left, left_cols, cap):
            if not mask.any():
                continue
            if packed:
                if np.isin(_keys(env, mask, left_cols), right.packed, invert=True).any():
                    return SatResult.SAT
            elif any(row not in right.wide for row in _rows(env, mask, left_cols)):
                return SatResult.SAT
        return SatResult.UNSAT

    def _projection(self, c: Conjunction, cols: list[Var], packed: bool) -> _Projection:
        memo_key = (c.key, tuple(v.var for v in cols))
        hit = self._projections.get(memo_key)
        if hit is not None:
            self._projections.move_to_end(memo_key)
            self.stats.projection_hits += 1
            return hit

        proj = _Projection()
        blocks: list[np.ndarray] = []
        for env, mask in _lanes(c, cols, self.cfg.max_domain_bits):
            if not mask.any():
                continue
            if packed:
                blocks.append(np.unique(_keys(env, mask, cols)))
            else:
                proj.wide.update(_rows(env, mask, cols))
        if packed:
            proj.packed = np.unique(np.concatenate(blocks)) if blocks else np.zeros(0, dtype=np.uint64)

        self._projections[memo_key] = proj
        while len(self._projections) > PROJECTION_MEMO_SIZE:
            self._projections.popitem(last=False)
        return proj


def solver_session(cfg: BackendConfig) -> SolverSession:
    if isinstance(cfg, ExternalBackend):
        return SmtLibSession(cfg)
    if isinstance(cfg, EnumerationBackend):
        return EnumerationSession(cfg)
    raise TypeError(f"unknown backend config {cfg!r}")


def check_sat(obj: Checkable, cfg: BackendConfig) -> SatResult:
    """One-shot satisfiability check in a throwaway session."""
    with solver_session(cfg) as session:
        return session.check(obj)


def _self_test(argv: list[str]) -> int:
    from . import bvlogic as bl
    from .paths import solver_args, solver_path

    x = bl.var(VarId(0, 0, 1), 2)
    contradiction = Conjunction((bl.ne(x, x),))
    backends: list[BackendConfig] = [EnumerationBackend()]
    path = argv[1] if len(argv) > 1 else solver_path()
    if path:
        backends.append(ExternalBackend(path, solver_args()))

    for cfg in backends:
        result = check_sat(contradiction, cfg)
        print(f"{cfg.name}: x != x -> {result}")
        assert result is SatResult.UNSAT, result
    return 0


if __name__ == "__main__":
    raise SystemExit(_self_test(sys.argv))
