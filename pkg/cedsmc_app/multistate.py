from __future__ import annotations

import enum
import logging
from collections import Counter
from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property

from . import bvlogic as bl
from .bvlogic import Conjunction, Term, Var, VarId, canonical_clauses, is_vacuous, vacuous_equality
from .errors import ShapeMismatch
from .progmodel import (
    Assert,
    Assign,
    Branch,
    Call,
    ControlPart,
    Frame,
    Halt,
    Input,
    Instr,
    Join,
    Mark,
    MemoryShape,
    Program,
    ProgVar,
    Ref,
    Return,
    Scope,
    Spawn,
    GLOBAL_SEGMENT,
    enabled_steps,
    initial_control,
    initial_shape,
    new_segment,
    to_term,
)
from .unionfind import UnionFind


LOG = logging.getLogger(__name__)

__all__ = [
    "Monolithic",
    "MultiState",
    "Sliced",
    "StoreKind",
    "apply_instruction",
    "conjoin",
    "dump",
    "enabled_steps",
    "initial_state",
    "match_parts",
    "match_states",
    "p_vars",
    "slice",
    "syntactically_equal",
    "vacuous_equality",
]


class StoreKind(enum.Enum):
    MONOLITHIC = "smt"
    SLICED = "partial"


def prog_var(v: VarId) -> ProgVar:
    return ProgVar(v.segment, v.position)


def p_vars(c: Conjunction | Term) -> frozenset[ProgVar]:
    """Program variables represented in c, generations dropped."""
    return frozenset(prog_var(v) for v in c.free_vars)


def _holds(clause: Term) -> bool:
    return not clause.free_vars and bool(bl.evaluate(clause, {}))


def _retire_vacuous(clauses: Iterable[Term]) -> tuple[Term, ...]:
    """Drop x = x clauses whose x also occurs in a constraining clause."""
    clauses = tuple(clauses)
    constrained: set[VarId] = set()
    for c in clauses:
        if not is_vacuous(c):
            constrained |= c.free_vars
    return tuple(c for c in clauses if not (is_vacuous(c) and c.args[0].var in constrained))


def slice(c: Conjunction, *, by_program_var: bool = False) -> list[Conjunction]:  # noqa: A001
    """Maximal slicing: connected components of the variable-sharing graph.

    Parts are ordered by their first clause and keep the original clause
    order. Ground clauses form singleton parts.
    """
    clauses = c.clauses
    uf: UnionFind[int] = UnionFind(range(len(clauses)))
    first: dict[object, int] = {}
    for i, clause in enumerate(clauses):
        keys = p_vars(clause) if by_program_var else clause.free_vars
        for k in keys:
            uf.union(i, first.setdefault(k, i))

    return [Conjunction(tuple(clauses[i] for i in members)) for members in uf.groups().values()]


@dataclass(frozen=True)
class Monolithic:
    """Symbolic part as a single conjunction."""

    conj: Conjunction = Conjunction()

    @property
    def parts(self) -> tuple[Conjunction, ...]:
        return (self.conj,)

    def as_conjunction(self) -> Conjunction:
        return self.conj

    def conjoin(self, psi: Conjunction) -> Monolithic:
        new = [c for c in psi.clauses if not _holds(c)]
        if not new:
            return self
        return Monolithic(Conjunction(_retire_vacuous(self.conj.clauses + tuple(new))))


@dataclass(frozen=True)
class Sliced:
    """Symbolic part as mutually independent conjunctions.

    Parts are independent per program variable: every generation of a
    variable lives in one part.
    """

    parts: tuple[Conjunction, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "parts", tuple(self.parts))
        if __debug__:
            seen = Counter(pv for part in self.parts for pv in p_vars(part))
            shared = [pv for pv, n in seen.items() if n > 1]
            assert not shared, f"program variables shared between parts: {shared}"

    @cached_property
    def owner(self) -> dict[ProgVar, int]:
        return {pv: i for i, part in enumerate(self.parts) for pv in p_vars(part)}

    def as_conjunction(self) -> Conjunction:
        return Conjunction(tuple(c for part in self.parts for c in part.clauses))

    def conjoin(self, psi: Conjunction) -> Sliced:
        new = Conjunction(tuple(c for c in psi.clauses if not _holds(c)))
        if not new.clauses:
            return self
        out = self
        for component in slice(new, by_program_var=True):
            out = out._merge(component)
        return out

    def _merge(self, psi: Conjunction) -> Sliced:
        touched = sorted({self.owner[pv] for pv in p_vars(psi) if pv in self.owner})
        merged_clauses = [c for i in touched for c in self.parts[i].clauses]
        merged = Conjunction(_retire_vacuous(merged_clauses + list(psi.clauses)))
        if not touched:
            return Sliced(self.parts + (merged,))
        parts: list[Conjunction] = []
        for i, part in enumerate(self.parts):
            if i == touched[0]:
                parts.append(merged)
            elif i not in touched:
                parts.append(part)
        return Sliced(tuple(parts))


SymbolicPart = Monolithic | Sliced


def conjoin(s: SymbolicPart, psi: Conjunction) -> SymbolicPart:
    return s.conjoin(psi)


@dataclass(frozen=True, eq=False)
class MultiState:
    control: ControlPart
    shape: MemoryShape
    symbolic: SymbolicPart
    gens: Mapping[ProgVar, int] = field(default_factory=dict)
    error: bool = False

    @cached_property
    def explicit_key(self) -> tuple[ControlPart, MemoryShape, bool]:
        return (self.control, self.shape, self.error)

    @property
    def parts(self) -> tuple[Conjunction, ...]:
        return self.symbolic.parts

    def var(self, pv: ProgVar, generation: int) -> Var:
        width = self.shape.descriptor(pv).width
        return bl.var(VarId(pv.segment, pv.position, generation), width)

    def live_symbolic(self) -> list[ProgVar]:
        return self.shape.symbolic_vars()

    def with_symbolic(self, symbolic: SymbolicPart) -> MultiState:
        return replace(self, symbolic=symbolic)


def initial_state(program: Program, store: StoreKind = StoreKind.SLICED) -> MultiState:
    shape = initial_shape(program)
    symbolic: SymbolicPart = Sliced() if store is StoreKind.SLICED else Monolithic()
    return MultiState(initial_control(program, shape), shape, symbolic)


# Transitions


class _Step:
    """Mutable scratch copy of a state while one instruction executes."""

    def __init__(self, program: Program, state: MultiState, thread: int) -> None:
        self.program = program
        self.state = state
        self.thread = thread
        self.control = state.control
        self.shape = state.shape
        self.gens = dict(state.gens)
        self.clauses: list[Term] = []

    def locate(self, ref: Ref, segment: int) -> ProgVar:
        if ref.scope is Scope.GLOBAL:
            return ProgVar(GLOBAL_SEGMENT, ref.position)
        return ProgVar(segment, ref.position)

    def var(self, pv: ProgVar, generation: int) -> Var:
        width = self.shape.descriptor(pv).width
        return bl.var(VarId(pv.segment, pv.position, generation), width)

    def read(self, pv: ProgVar) -> Term:
        desc = self.shape.descriptor(pv)
        if desc.mark is Mark.EXPLICIT:
            return bl.const(desc.value, desc.width)
        gen = self.gens.get(pv, 0)
        if gen == 0:
            gen = self.gens[pv] = 1
            self.clauses.append(vacuous_equality(self.var(pv, 1)))
        return self.var(pv, gen)

    def reader(self, segment: int) -> Callable[[Ref], Term]:
        return lambda ref: self.read(self.locate(ref, segment))

    def write(self, pv: ProgVar, term: Term) -> None:
        seg = self.shape.get(pv.segment)
        desc = seg.vars[pv.position]
        if self.program.decl(seg.function, pv.position).explicit and not term.free_vars:
            value = int(bl.evaluate(term, {}))
            self.shape = self.shape.with_descriptor(pv, replace(desc, mark=Mark.EXPLICIT, value=value))
            return
        gen = self.gens[pv] = self.gens.get(pv, 0) + 1
        self.clauses.append(bl.eq(self.var(pv, gen), term))
        self._demote(pv)

    def havoc(self, pv: ProgVar) -> None:
        gen = self.gens[pv] = self.gens.get(pv, 0) + 1
        self.clauses.append(vacuous_equality(self.var(pv, gen)))
        self._demote(pv)

    def _demote(self, pv: ProgVar) -> None:
        desc = self.shape.descriptor(pv)
        if desc.mark is Mark.EXPLICIT:
            self.shape = self.shape.with_descriptor(pv, replace(desc, mark=Mark.SYMBOLIC, value=None))

    def activate(self, function: str) -> int:
        """Allocate a segment for function; stale generations get a fresh one."""
        sid = self.shape.fresh_id()
        self.shape = self.shape.with_segment(new_segment(self.program, function, sid))
        callee = self.program.function(function)
        for pos in range(len(callee.params), len(callee.variables)):
            pv = ProgVar(sid, pos)
            if self.gens.get(pv, 0) > 0:
                self.havoc(pv)
        return sid

    def moved(self, pc: int) -> ControlPart:
        frame = self.control.top(self.thread)
        return self.control.with_top(self.thread, replace(frame, pc=pc))

    def finish(self, control: ControlPart | None = None, prune: Term | None = None, error: bool = False) -> MultiState:
        clauses = list(self.clauses)
        if prune is not None:
            clauses.append(prune)
        symbolic = self.state.symbolic
        if clauses:
            symbolic = symbolic.conjoin(Conjunction(tuple(clauses)))
        return MultiState(
            control if control is not None else self.control,
            self.shape,
            symbolic,
            dict(self.gens),
            error,
        )


def apply_instruction(program: Program, state: MultiState, thread: int, instr: Instr) -> list[MultiState]:
    """Successors of state when thread executes instr.

    Branches on symbolic conditions yield a pruned successor per outcome;
    an assertion yields a passing successor and an error-flagged one.
    Emptiness is not checked here.
    """
    step = _Step(program, state, thread)
    frame = state.control.top(thread)
    read = step.reader(frame.segment)

    match instr:
        case Assign(dst=dst, expr=expr):
            step.write(step.locate(dst, frame.segment), to_term(expr, read))
            return [step.finish(step.moved(frame.pc + 1))]

        case Input(dst=dst):
            step.havoc(step.locate(dst, frame.segment))
            return [step.finish(step.moved(frame.pc + 1))]

        case Branch(cond=cond, target_true=t, target_false=f):
            term = to_term(cond, read)
            if not term.free_vars:
                return [step.finish(step.moved(t if bl.evaluate(term, {}) else f))]
            return [
                step.finish(step.moved(t), prune=term),
                step.finish(step.moved(f), prune=bl.not_(term)),
            ]

        case Assert(cond=cond):
            term = to_term(cond, read)
            if not term.free_vars:
                if bl.evaluate(term, {}):
                    return [step.finish(step.moved(frame.pc + 1))]
                return [step.finish(error=True)]
            return [
                step.finish(step.moved(frame.pc + 1), prune=term),
                step.finish(prune=bl.not_(term), error=True),
            ]

        case Call(function=function, args=args):
            values = [to_term(a, read) for a in args]
            sid = step.activate(function)
            for pos, value in enumerate(values):
                step.write(ProgVar(sid, pos), value)
            stack = step.control.stacks[thread] + (Frame(function, 0, sid),)
            return [step.finish(step.control.with_stack(thread, stack))]

        case Return(expr=expr):
            value = to_term(expr, read) if expr is not None else None
            stack = step.control.stacks[thread]
            step.shape = step.shape.without(frame.segment)
            rest = stack[:-1]
            if not rest:
                return [step.finish(step.control.with_stack(thread, ()))]
            caller = rest[-1]
            call = program.function(caller.function).body[caller.pc]
            assert isinstance(call, Call), f"return into non-call instruction {call!r}"
            if call.dst is not None:
                pv = step.locate(call.dst, caller.segment)
                if value is None:
                    step.havoc(pv)
                else:
                    step.write(pv, value)
            return [step.finish(step.control.with_stack(thread, rest[:-1] + (replace(caller, pc=caller.pc + 1),)))]

        case Spawn(function=function):
            sid = step.activate(function)
            control = step.moved(frame.pc + 1).spawned(Frame(function, 0, sid))
            return [step.finish(control)]

        case Join():
            control = step.moved(frame.pc + 1)
            if thread + 1 < control.thread_count:
                control = control.without_thread(thread + 1)
            return [step.finish(control)]

        case Halt():
            for f in step.control.stacks[thread]:
                step.shape = step.shape.without(f.segment)
            return [step.finish(step.control.with_stack(thread, ()))]

    raise TypeError(f"not an instruction: {instr!r}")


# Matching and comparison


def match_parts(
    a: Sequence[Conjunction], b: Sequence[Conjunction]
) -> tuple[list[Conjunction], list[Conjunction]]:
    """Merge both part lists onto their finest common program-variable partition.

    Part i of one result and part i of the other cover the same component.
    A side without a part for a component gets the empty conjunction.
    Ground parts are collected in one trailing part per side.
    """
    uf: UnionFind[ProgVar] = UnionFind()
    for part in (*a, *b):
        uf.union_all(sorted(p_vars(part)))

    # components ordered by their smallest program variable
    components = sorted(uf.groups().values(), key=min)
    index = {pv: n for n, members in enumerate(components) for pv in members}

    def regroup(parts: Sequence[Conjunction]) -> tuple[list[list[Term]], list[Term]]:
        groups: list[list[Term]] = [[] for _ in components]
        ground: list[Term] = []
        for part in parts:
            pvs = p_vars(part)
            if pvs:
                groups[index[next(iter(pvs))]].extend(part.clauses)
            else:
                ground.extend(part.clauses)
        return groups, ground

    ga, ground_a = regroup(a)
    gb, ground_b = regroup(b)
    if ground_a or ground_b:
        ga.append(ground_a)
        gb.append(ground_b)
    return [Conjunction(tuple(g)) for g in ga], [Conjunction(tuple(g)) for g in gb]


def match_states(a: MultiState, b: MultiState) -> tuple[Sliced, Sliced]:
    if a.control != b.control or a.shape != b.shape:
        raise ShapeMismatch("states differ in their explicit parts")
    pa, pb = match_parts(a.parts, b.parts)
    return Sliced(tuple(pa)), Sliced(tuple(pb))


def syntactically_equal(a: SymbolicPart, b: SymbolicPart) -> bool:
    """Equal as conjunctions up to clause order (and part order when sliced)."""
    if isinstance(a, Sliced) and isinstance(b, Sliced):
        return sorted(p.key for p in a.parts if p.clauses) == sorted(p.key for p in b.parts if p.clauses)
    return a.as_conjunction().key == b.as_conjunction().key


# Debug dump

_INFIX = {
    bl.Op.EQ: "=",
    bl.Op.ULE: "<=u",
    bl.Op.SLE: "<=s",
    bl.Op.ADD: "+",
    bl.Op.MUL: "*",
    bl.Op.UDIV: "/u",
    bl.Op.AND: "&",
    bl.Op.OR: "|",
    bl.Op.XOR: "^",
    bl.Op.SHL: "<<",
    bl.Op.LSHR: ">>u",
    bl.Op.CONCAT: "++",
    bl.Op.BAND: "&&",
    bl.Op.BOR: "||",
    bl.Op.IMPLIES: "=>",
}


def render(t: Term, names: Mapping[ProgVar, str] | None = None) -> str:
    names = names or {}
    match t:
        case bl.Var(var=v):
            name = names.get(prog_var(v), f"s{v.segment}p{v.position}")
            tick = "'" if v.side is bl.Side.RIGHT else ""
            return f"{name}{tick}^{v.generation}"
        case bl.Const(value=value):
            return str(value)
        case bl.BoolConst(value=value):
            return "true" if value else "false"
        case bl.Forall(bound=bound, body=body):
            return f"forall {' '.join(render(b, names) for b in bound)}. {render(body, names)}"
        case bl.Apply(op=bl.Op.NOT, args=(arg,)):
            return f"!{render(arg, names)}"
        case bl.Apply(op=bl.Op.EXTRACT, args=(arg,), params=(n, p)):
            return f"extract({n},{p},{render(arg, names)})"
        case bl.Apply(op=op, args=args):
            return "(" + f" {_INFIX[op]} ".join(render(a, names) for a in args) + ")"
    raise TypeError(f"cannot render {t!r}")


def dump(
    obj: MultiState | SymbolicPart | Conjunction | Sequence[Conjunction],
    names: Mapping[ProgVar, str] | None = None,
) -> str:
    """One line per part, clauses in canonical order, lines sorted."""
    if isinstance(obj, MultiState):
        if names is None:
            names = {pv: d.name for pv, d in obj.shape.prog_vars()}
        parts: Sequence[Conjunction] = obj.parts
    elif isinstance(obj, (Monolithic, Sliced)):
        parts = obj.parts
    elif isinstance(obj, Conjunction):
        parts = (obj,)
    else:
        parts = obj

    lines = []
    for part in parts:
        clauses = canonical_clauses(part)
        lines.append(" & ".join(render(c, names) for c in clauses) if clauses else "true")
    return "\n".join(sorted(lines)) + "\n"
