from __future__ import annotations

import enum
import hashlib
from collections.abc import Callable, Iterable, Mapping
from dataclasses import dataclass
from functools import cached_property, reduce
from typing import Protocol

import numpy as np

from .errors import SortError, UnassignedVariable


MAX_WIDTH = 64


@dataclass(frozen=True, order=True)
class Sort:
    """A bit-vector sort of 1..64 bits, or Boolean when width is 0."""

    width: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.width <= MAX_WIDTH:
            raise SortError(f"unsupported bit-vector width {self.width}")

    @property
    def is_bool(self) -> bool:
        return self.width == 0

    @property
    def smt(self) -> str:
        return "Bool" if self.is_bool else f"(_ BitVec {self.width})"

    def __str__(self) -> str:
        return "Bool" if self.is_bool else f"u{self.width}"


BOOL = Sort(0)


def bv(width: int) -> Sort:
    if not 1 <= width <= MAX_WIDTH:
        raise SortError(f"bit-vector width must be in [1, {MAX_WIDTH}], got {width}")
    return Sort(width)


class Side(enum.IntEnum):
    LEFT = 0
    RIGHT = 1


@dataclass(frozen=True, order=True)
class VarId:
    """Occurrence (segment, position)^generation of a program variable."""

    segment: int
    position: int
    generation: int
    side: Side = Side.LEFT

    def __post_init__(self) -> None:
        if self.segment < 0 or self.position < 0:
            raise ValueError(f"invalid variable location ({self.segment}, {self.position})")
        if self.generation < 1:
            raise ValueError(f"generation must be >= 1, got {self.generation}")

    @property
    def smt_name(self) -> str:
        prefix = "L_" if self.side is Side.LEFT else "R_"
        return f"{prefix}s{self.segment}_p{self.position}_g{self.generation}"

    def with_side(self, side: Side) -> VarId:
        if side is self.side:
            return self
        return VarId(self.segment, self.position, self.generation, side)

    def __str__(self) -> str:
        return self.smt_name


class Op(enum.Enum):
    EQ = "="
    ULE = "bvule"
    SLE = "bvsle"
    ADD = "bvadd"
    MUL = "bvmul"
    UDIV = "bvudiv"
    AND = "bvand"
    OR = "bvor"
    XOR = "bvxor"
    SHL = "bvshl"
    LSHR = "bvlshr"
    CONCAT = "concat"
    EXTRACT = "extract"
    NOT = "not"
    BAND = "and"
    BOR = "or"
    IMPLIES = "=>"
    MOD = "bvurem"

    @cached_property
    def order(self) -> int:
        return list(Op).index(self)


_PREDICATES = frozenset({Op.EQ, Op.ULE, Op.SLE})
_BV_BINARY = frozenset(
    {Op.ADD, Op.MUL, Op.UDIV, Op.AND, Op.OR, Op.XOR, Op.SHL, Op.LSHR}
)
_CONNECTIVES = frozenset({Op.BAND, Op.BOR})


class Term:
    """Base of all terms. Subclasses are frozen dataclasses."""

    sort: Sort

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        raise NotImplementedError

    @cached_property
    def free_vars(self) -> frozenset[VarId]:
        return frozenset(v.var for v in self.free_var_terms)

    @cached_property
    def sort_key(self) -> tuple:
        raise NotImplementedError

    @cached_property
    def smt(self) -> str:
        raise NotImplementedError

    @cached_property
    def has_quantifier(self) -> bool:
        return False

    @cached_property
    def _hash(self) -> int:
        return hash(self.sort_key)

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        if not isinstance(other, Term):
            return NotImplemented
        return self._hash == other._hash and self.sort_key == other.sort_key

    def __hash__(self) -> int:
        return self._hash

    def __str__(self) -> str:
        return self.smt


@dataclass(frozen=True, eq=False)
class Var(Term):
    var: VarId
    sort: Sort

    def __post_init__(self) -> None:
        if self.sort.is_bool:
            raise SortError(f"program variable {self.var} must be a bit-vector")

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        return frozenset((self,))

    @cached_property
    def sort_key(self) -> tuple:
        v = self.var
        return (0, self.sort.width, v.segment, v.position, v.generation, int(v.side))

    @cached_property
    def smt(self) -> str:
        return self.var.smt_name


@dataclass(frozen=True, eq=False)
class Const(Term):
    value: int
    width: int

    def __post_init__(self) -> None:
        bv(self.width)
        if not 0 <= self.value < (1 << self.width):
            raise SortError(f"constant {self.value} does not fit in {self.width} bits")

    @property
    def sort(self) -> Sort:
        return Sort(self.width)

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        return frozenset()

    @cached_property
    def sort_key(self) -> tuple:
        return (1, self.width, self.value)

    @cached_property
    def smt(self) -> str:
        if self.width % 4 == 0:
            return f"#x{self.value:0{self.width // 4}x}"
        return f"#b{self.value:0{self.width}b}"


@dataclass(frozen=True, eq=False)
class BoolConst(Term):
    value: bool

    @property
    def sort(self) -> Sort:
        return BOOL

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        return frozenset()

    @cached_property
    def sort_key(self) -> tuple:
        return (2, 0, int(self.value))

    @cached_property
    def smt(self) -> str:
        return "true" if self.value else "false"


TRUE = BoolConst(True)
FALSE = BoolConst(False)


@dataclass(frozen=True, eq=False)
class Apply(Term):
    op: Op
    args: tuple[Term, ...]
    params: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "sort", _result_sort(self.op, self.args, self.params))

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        if len(self.args) == 1:
            return self.args[0].free_var_terms
        return frozenset().union(*(a.free_var_terms for a in self.args))

    @cached_property
    def sort_key(self) -> tuple:
        return (
            3,
            self.op.order,
            self.sort.width,
            self.params,
            tuple(a.sort_key for a in self.args),
        )

    @cached_property
    def smt(self) -> str:
        args = " ".join(a.smt for a in self.args)
        if self.op is Op.EXTRACT:
            n, p = self.params
            return f"((_ extract {p + n - 1} {p}) {args})"
        return f"({self.op.value} {args})"

    @cached_property
    def has_quantifier(self) -> bool:
        return any(a.has_quantifier for a in self.args)


@dataclass(frozen=True, eq=False)
class Forall(Term):
    bound: tuple[Var, ...]
    body: Term

    def __post_init__(self) -> None:
        object.__setattr__(self, "bound", tuple(self.bound))
        if not self.bound:
            raise SortError("forall needs at least one bound variable")
        if not all(isinstance(b, Var) for b in self.bound):
            raise SortError("forall binds variables only")
        if not self.body.sort.is_bool:
            raise SortError("forall body must be Boolean")

    @property
    def sort(self) -> Sort:
        return BOOL

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        return self.body.free_var_terms - frozenset(self.bound)

    @cached_property
    def sort_key(self) -> tuple:
        return (4, 0, tuple(b.sort_key for b in self.bound), self.body.sort_key)

    @cached_property
    def smt(self) -> str:
        binders = " ".join(f"({b.smt} {b.sort.smt})" for b in self.bound)
        return f"(forall ({binders}) {self.body.smt})"

    @cached_property
    def has_quantifier(self) -> bool:
        return True


def _result_sort(op: Op, args: tuple[Term, ...], params: tuple[int, ...]) -> Sort:
    if not all(isinstance(a, Term) for a in args):
        raise SortError(f"{op.name} operands must be terms")
    sorts = [a.sort for a in args]

    if op is Op.MOD:
        raise SortError("MOD is lowered at construction; build it with urem()")
    if op in _PREDICATES or op in _BV_BINARY:
        if len(args) != 2:
            raise SortError(f"{op.name} takes two operands, got {len(args)}")
        if sorts[0].is_bool or sorts[0] != sorts[1]:
            raise SortError(f"{op.name} needs equal bit-vector sorts, got {sorts[0]} and {sorts[1]}")
        return BOOL if op in _PREDICATES else sorts[0]
    if op is Op.CONCAT:
        if len(args) != 2 or any(s.is_bool for s in sorts):
            raise SortError("CONCAT takes two bit-vector operands")
        return bv(sorts[0].width + sorts[1].width)
    if op is Op.EXTRACT:
        if len(args) != 1 or sorts[0].is_bool or len(params) != 2:
            raise SortError("EXTRACT takes one bit-vector operand and (n, p)")
        n, p = params
        if n < 1 or p < 0 or p + n > sorts[0].width:
            raise SortError(f"extract({n}, {p}) out of range for {sorts[0]}")
        return bv(n)
    if op is Op.NOT:
        if len(args) != 1 or not sorts[0].is_bool:
            raise SortError("NOT takes one Boolean operand")
        return BOOL
    if op in _CONNECTIVES or op is Op.IMPLIES:
        if op is Op.IMPLIES and len(args) != 2:
            raise SortError("IMPLIES takes two operands")
        if len(args) < 2 or not all(s.is_bool for s in sorts):
            raise SortError(f"{op.name} takes at least two Boolean operands")
        return BOOL
    raise SortError(f"unknown operator {op}")


# Factories. These are the supported way of building terms.


def var(v: VarId, width: int) -> Var:
    return Var(v, bv(width))


def const(value: int, width: int) -> Const:
    bv(width)
    return Const(value & ((1 << width) - 1), width)


def ones(width: int) -> Const:
    return const(-1, width)


def apply(op: Op, *args: Term, params: tuple[int, ...] = ()) -> Term:
    if op is Op.MOD:
        return urem(*args)
    return Apply(op, args, params)


def eq(a: Term, b: Term) -> Term:
    return Apply(Op.EQ, (a, b))


def ne(a: Term, b: Term) -> Term:
    return not_(eq(a, b))


def ule(a: Term, b: Term) -> Term:
    return Apply(Op.ULE, (a, b))


def sle(a: Term, b: Term) -> Term:
    return Apply(Op.SLE, (a, b))


def ult(a: Term, b: Term) -> Term:
    return not_(ule(b, a))


def slt(a: Term, b: Term) -> Term:
    return not_(sle(b, a))


def add(a: Term, b: Term) -> Term:
    return Apply(Op.ADD, (a, b))


def mul(a: Term, b: Term) -> Term:
    return Apply(Op.MUL, (a, b))


def udiv(a: Term, b: Term) -> Term:
    return Apply(Op.UDIV, (a, b))


def bvand(a: Term, b: Term) -> Term:
    return Apply(Op.AND, (a, b))


def bvor(a: Term, b: Term) -> Term:
    return Apply(Op.OR, (a, b))


def bvxor(a: Term, b: Term) -> Term:
    return Apply(Op.XOR, (a, b))


def shl(a: Term, b: Term) -> Term:
    return Apply(Op.SHL, (a, b))


def lshr(a: Term, b: Term) -> Term:
    return Apply(Op.LSHR, (a, b))


def concat(a: Term, b: Term) -> Term:
    return Apply(Op.CONCAT, (a, b))


def extract(a: Term, n: int, p: int) -> Term:
    return Apply(Op.EXTRACT, (a,), (n, p))


def neg(a: Term) -> Term:
    """Two's-complement negation: (a xor 1...1) + 1."""
    w = a.sort.width
    return add(bvxor(a, ones(w)), const(1, w))


def sub(a: Term, b: Term) -> Term:
    return add(a, neg(b))


def urem(a: Term, b: Term) -> Term:
    """Unsigned remainder lowered to a - (a /u b) * b.

    With b = 0 the quotient is all-ones and the product 0, so a mod 0 = a.
    """
    return sub(a, mul(udiv(a, b), b))


def not_(a: Term) -> Term:
    return Apply(Op.NOT, (a,))


def and_(*terms: Term) -> Term:
    if not terms:
        return TRUE
    if len(terms) == 1:
        return terms[0]
    return Apply(Op.BAND, terms)


def or_(*terms: Term) -> Term:
    if not terms:
        return FALSE
    if len(terms) == 1:
        return terms[0]
    return Apply(Op.BOR, terms)


def implies(a: Term, b: Term) -> Term:
    return Apply(Op.IMPLIES, (a, b))


def forall(bound: Iterable[Var], body: Term) -> Term:
    bound = tuple(sorted(set(bound), key=lambda v: v.sort_key))
    if not bound:
        return body
    return Forall(bound, body)


def vacuous_equality(v: Var) -> Term:
    """(s,p)^g = (s,p)^g, keeps a variable represented without constraining it."""
    return eq(v, v)


def is_vacuous(clause: Term) -> bool:
    return (
        isinstance(clause, Apply)
        and clause.op is Op.EQ
        and isinstance(clause.args[0], Var)
        and clause.args[0] == clause.args[1]
    )


def map_vars(term: Term, fn: Callable[[Var], Term]) -> Term:
    """Rebuild term with every free or bound variable replaced by fn(var)."""
    memo: dict[int, Term] = {}

    def go(t: Term) -> Term:
        hit = memo.get(id(t))
        if hit is not None:
            return hit
        if isinstance(t, Var):
            out = fn(t)
        elif isinstance(t, Apply):
            args = tuple(go(a) for a in t.args)
            out = t if all(x is y for x, y in zip(args, t.args)) else Apply(t.op, args, t.params)
        elif isinstance(t, Forall):
            bound = tuple(go(b) for b in t.bound)
            out = Forall(bound, go(t.body))  # type: ignore[arg-type]
        else:
            out = t
        memo[id(t)] = out
        return out

    return go(term)


def retag(term: Term, side: Side) -> Term:
    return map_vars(term, lambda v: v if v.var.side is side else Var(v.var.with_side(side), v.sort))


# Conjunctions


@dataclass(frozen=True)
class Conjunction:
    clauses: tuple[Term, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "clauses", tuple(self.clauses))
        for c in self.clauses:
            if not isinstance(c, Term) or not c.sort.is_bool:
                raise SortError(f"conjunction clause must be Boolean: {c}")
            if c.has_quantifier:
                raise SortError("quantifiers are not allowed inside state conjunctions")

    def __len__(self) -> int:
        return len(self.clauses)

    def __iter__(self):
        return iter(self.clauses)

    @property
    def is_top(self) -> bool:
        return not self.clauses

    @cached_property
    def free_var_terms(self) -> frozenset[Var]:
        return frozenset().union(*(c.free_var_terms for c in self.clauses))

    @cached_property
    def free_vars(self) -> frozenset[VarId]:
        return frozenset(v.var for v in self.free_var_terms)

    @cached_property
    def key(self) -> bytes:
        return canonical_key(self)

    def and_(self, *clauses: Term) -> Conjunction:
        return Conjunction(self.clauses + clauses)

    def extend(self, other: Conjunction) -> Conjunction:
        return Conjunction(self.clauses + other.clauses)

    def as_term(self) -> Term:
        return and_(*self.clauses)

    def retag(self, side: Side) -> Conjunction:
        return Conjunction(tuple(retag(c, side) for c in self.clauses))

    def __str__(self) -> str:
        if not self.clauses:
            return "true"
        return " & ".join(c.smt for c in self.clauses)


def canonical_clauses(c: Conjunction) -> list[Term]:
    return sorted(c.clauses, key=lambda t: t.sort_key)


def canonical_key(c: Conjunction) -> bytes:
    """Digest of the clause multiset; insensitive to clause order only."""
    h = hashlib.sha1()
    for clause in canonical_clauses(c):
        h.update(repr(clause.sort_key).encode("ascii"))
        h.update(b"\n")
    return h.digest()


def free_vars(t: Term | Conjunction) -> frozenset[VarId]:
    return t.free_vars


def independent(a: Term | Conjunction, b: Term | Conjunction) -> bool:
    """True iff a and b share no free variable."""
    return a.free_vars.isdisjoint(b.free_vars)


# Serialization


class HasBody(Protocol):
    @property
    def body(self) -> Term: ...


def serialize_smtlib(obj: Term | Conjunction | HasBody) -> str:
    if isinstance(obj, Conjunction):
        term = obj.as_term()
    elif isinstance(obj, Term):
        term = obj
    else:
        term = obj.body
    if not term.sort.is_bool:
        raise SortError("only Boolean terms can be asserted")

    lines = ["(set-logic BV)"]
    for v in sorted(term.free_var_terms, key=lambda v: v.var):
        lines.append(f"(declare-const {v.smt} {v.sort.smt})")
    lines.append(f"(assert {term.smt})")
    lines.append("(check-sat)")
    return "\n".join(lines) + "\n"


# Evaluation


Assignment = Mapping[VarId, int]


def _mask(width: int) -> np.uint64:
    return np.uint64((1 << width) - 1)


def evaluate_vector(term: Term, env: Mapping[VarId, np.ndarray]) -> np.ndarray:
    """Evaluate term lane-wise over numpy uint64 arrays (broadcasting)."""
    with np.errstate(all="ignore"):
        return _eval(term, env)


def evaluate(term: Term, mu: Assignment) -> int | bool:
    env: dict[VarId, np.ndarray] = {}
    for v in term.free_var_terms:
        if v.var not in mu:
            raise UnassignedVariable(v.var)
        value = mu[v.var]
        if not 0 <= value < (1 << v.sort.width):
            raise SortError(f"value {value} does not fit {v.var} of sort {v.sort}")
        env[v.var] = np.array(value, dtype=np.uint64)
    out = evaluate_vector(term, env)
    return bool(out) if term.sort.is_bool else int(out)


def _eval(t: Term, env: Mapping[VarId, np.ndarray]):
    match t:
        case Var(var=v):
            try:
                return env[v]
            except KeyError:
                raise UnassignedVariable(v) from None
        case Const(value=value):
            return np.uint64(value)
        case BoolConst(value=value):
            return np.bool_(value)
        case Forall():
            return _eval_forall(t, env)
        case Apply(op=op, args=args, params=params):
            return _eval_apply(t, op, [_eval(a, env) for a in args], params)
    raise SortError(f"cannot evaluate {t!r}")


def _eval_apply(t: Apply, op: Op, vals: list, params: tuple[int, ...]):
    if op is Op.NOT:
        return np.logical_not(vals[0])
    if op is Op.BAND:
        return reduce(np.logical_and, vals)
    if op is Op.BOR:
        return reduce(np.logical_or, vals)
    if op is Op.IMPLIES:
        return np.logical_or(np.logical_not(vals[0]), vals[1])

    a = vals[0]
    if op is Op.EXTRACT:
        n, p = params
        return (a >> np.uint64(p)) & _mask(n)

    b = vals[1]
    if op is Op.EQ:
        return a == b
    if op is Op.ULE:
        return a <= b
    if op is Op.SLE:
        sign = np.uint64(1 << (t.args[0].sort.width - 1))
        return (a ^ sign) <= (b ^ sign)
    if op is Op.CONCAT:
        return (a << np.uint64(t.args[1].sort.width)) | b

    w = t.sort.width
    m = _mask(w)
    zero = np.uint64(0)
    if op is Op.ADD:
        return (a + b) & m
    if op is Op.MUL:
        return (a * b) & m
    if op is Op.UDIV:
        safe = np.where(b == zero, np.uint64(1), b)
        return np.where(b == zero, m, a // safe)
    if op is Op.AND:
        return a & b
    if op is Op.OR:
        return a | b
    if op is Op.XOR:
        return a ^ b
    if op is Op.SHL:
        amount = np.minimum(b, np.uint64(w - 1))
        return np.where(b >= np.uint64(w), zero, (a << amount) & m)
    if op is Op.LSHR:
        amount = np.minimum(b, np.uint64(w - 1))
        return np.where(b >= np.uint64(w), zero, a >> amount)
    raise SortError(f"cannot evaluate operator {op}")


def _eval_forall(t: Forall, env: Mapping[VarId, np.ndarray]):
    bits = sum(b.sort.width for b in t.bound)
    idx = np.arange(1 << bits, dtype=np.uint64)

    inner: dict[VarId, np.ndarray] = {
        k: np.expand_dims(np.asarray(v), -1) for k, v in env.items()
    }
    offset = 0
    for b in t.bound:
        inner[b.var] = (idx >> np.uint64(offset)) & _mask(b.sort.width)
        offset += b.sort.width

    body = _eval(t.body, inner)
    shape = np.broadcast_shapes(*(np.shape(a) for a in inner.values()))
    return np.broadcast_to(body, shape).all(axis=-1)


def _self_test() -> int:
    x = var(VarId(0, 0, 1), 4)
    y = var(VarId(0, 1, 1), 4)

    assert evaluate(eq(const(3, 4), add(const(1, 4), const(2, 4))), {}) is True
    assert evaluate(sle(const(0b1111, 4), const(0, 4)), {}) is True
    assert evaluate(udiv(const(5, 4), const(0, 4)), {}) == 15
    assert evaluate(urem(x, const(3, 4)), {x.var: 11}) == 2
    assert evaluate(forall([y], implies(eq(x, y), ule(y, x))), {x.var: 7}) is True
    print(serialize_smtlib(Conjunction((eq(x, const(0, 4)),))), end="")
    print("bvlogic self-test OK")
    return 0


if __name__ == "__main__":
    raise SystemExit(_self_test())
