from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cedsmc_app import bvlogic as bl
from cedsmc_app.bvlogic import Conjunction, Side, VarId
from cedsmc_app.errors import SortError, UnassignedVariable
from tests.settings import QUICK_SETTINGS, STANDARD_SETTINGS
from tests.strategies import conjunctions, pool

X = bl.var(VarId(0, 0, 1), 4)
Y = bl.var(VarId(0, 1, 1), 4)
B8 = bl.var(VarId(0, 2, 1), 8)


def test_sorts():
    assert bl.BOOL.is_bool
    assert bl.bv(8).smt == "(_ BitVec 8)"
    with pytest.raises(SortError):
        bl.bv(0)
    with pytest.raises(SortError):
        bl.bv(65)


def test_factories_reject_ill_sorted_input():
    with pytest.raises(SortError):
        bl.eq(X, B8)
    with pytest.raises(SortError):
        bl.add(X, bl.eq(X, Y))
    with pytest.raises(SortError):
        bl.and_(X, Y)
    with pytest.raises(SortError):
        bl.extract(X, 3, 2)
    with pytest.raises(SortError):
        bl.concat(bl.var(VarId(0, 3, 1), 40), bl.var(VarId(0, 4, 1), 40))


def test_constants_are_masked():
    assert bl.const(17, 4).value == 1
    assert bl.const(-1, 4).value == 15
    assert bl.ones(3).value == 7


def test_nullary_connectives():
    assert bl.and_() == bl.TRUE
    assert bl.or_() == bl.FALSE
    assert bl.and_(bl.eq(X, Y)) == bl.eq(X, Y)
    assert bl.forall([], bl.eq(X, Y)) == bl.eq(X, Y)


def test_mod_is_lowered():
    t = bl.urem(X, bl.const(3, 4))
    assert isinstance(t, bl.Apply) and t.op is not bl.Op.MOD
    assert bl.evaluate(t, {X.var: 11}) == 2
    # x mod 0 = x
    assert bl.evaluate(bl.urem(X, bl.const(0, 4)), {X.var: 9}) == 9
    with pytest.raises(SortError):
        bl.Apply(bl.Op.MOD, (X, Y))


def test_division_by_zero_is_all_ones():
    assert bl.evaluate(bl.udiv(bl.const(5, 4), bl.const(0, 4)), {}) == 15


def test_signed_comparison():
    assert bl.evaluate(bl.sle(bl.const(8, 4), bl.const(7, 4)), {}) is True
    assert bl.evaluate(bl.sle(bl.const(7, 4), bl.const(8, 4)), {}) is False
    assert bl.evaluate(bl.slt(bl.const(15, 4), bl.const(0, 4)), {}) is True


def test_shifts_saturate():
    assert bl.evaluate(bl.shl(bl.const(1, 4), bl.const(4, 4)), {}) == 0
    assert bl.evaluate(bl.lshr(bl.const(8, 4), bl.const(9, 4)), {}) == 0
    assert bl.evaluate(bl.shl(bl.const(3, 4), bl.const(2, 4)), {}) == 12


def test_concat_extract():
    w = bl.concat(X, Y)
    assert w.sort.width == 8
    mu = {X.var: 0xA, Y.var: 0x5}
    assert bl.evaluate(w, mu) == 0xA5
    assert bl.evaluate(bl.extract(w, 4, 4), mu) == 0xA
    assert bl.evaluate(bl.extract(w, 4, 0), mu) == 0x5
    assert bl.extract(B8, 4, 2).smt == "((_ extract 5 2) L_s0_p2_g1)"


def test_evaluate_requires_every_variable():
    with pytest.raises(UnassignedVariable) as info:
        bl.evaluate(bl.eq(X, Y), {X.var: 1})
    assert info.value.var == Y.var


def test_evaluate_rejects_values_outside_the_sort():
    with pytest.raises(SortError):
        bl.evaluate(bl.eq(X, Y), {X.var: 16, Y.var: 0})


def test_forall_evaluation():
    body = bl.forall([Y], bl.ule(Y, X))
    assert bl.evaluate(body, {X.var: 15}) is True
    assert bl.evaluate(body, {X.var: 14}) is False


def test_conjunction_rejects_quantifiers_and_non_booleans():
    with pytest.raises(SortError):
        Conjunction((bl.forall([Y], bl.eq(X, Y)),))
    with pytest.raises(SortError):
        Conjunction((X,))


def test_vacuous_equality():
    v = bl.vacuous_equality(X)
    assert bl.is_vacuous(v)
    assert not bl.is_vacuous(bl.eq(X, Y))
    assert v.free_vars == {X.var}


def test_free_vars_and_independence():
    a = bl.eq(X, bl.const(1, 4))
    b = bl.ule(Y, bl.const(3, 4))
    assert bl.free_vars(bl.and_(a, b)) == {X.var, Y.var}
    assert bl.independent(a, b)
    assert not bl.independent(a, bl.eq(X, Y))
    assert bl.forall([Y], bl.eq(X, Y)).free_vars == {X.var}


def test_retag_moves_variables_to_the_right_side():
    t = bl.retag(bl.eq(X, Y), Side.RIGHT)
    assert all(v.side is Side.RIGHT for v in t.free_vars)
    assert "R_s0_p0_g1" in t.smt
    assert bl.independent(t, bl.eq(X, Y))


def test_serialize_smtlib():
    c = Conjunction((bl.eq(X, bl.const(0, 4)),))
    assert bl.serialize_smtlib(c) == (
        "(set-logic BV)\n"
        "(declare-const L_s0_p0_g1 (_ BitVec 4))\n"
        "(assert (= L_s0_p0_g1 #x0))\n"
        "(check-sat)\n"
    )


def test_serialize_smtlib_declares_only_free_variables():
    text = bl.serialize_smtlib(bl.forall([Y], bl.ule(Y, bl.add(X, Y))))
    assert "declare-const L_s0_p0_g1" in text
    assert "declare-const L_s0_p1_g1" not in text
    assert "(forall ((L_s0_p1_g1 (_ BitVec 4)))" in text


def test_odd_width_constants_render_in_binary():
    assert bl.const(5, 3).smt == "#b101"
    assert bl.const(5, 8).smt == "#x05"


def test_canonical_key_ignores_clause_order():
    a, b = bl.eq(X, Y), bl.ule(X, bl.const(3, 4))
    assert Conjunction((a, b)).key == Conjunction((b, a)).key
    assert Conjunction((a, b)).key != Conjunction((a,)).key
    assert Conjunction((a,)).key != Conjunction((a,)).retag(Side.RIGHT).key


@given(c=conjunctions(pool([2, 3, 2]), max_size=4), seed=st.randoms())
@STANDARD_SETTINGS
def test_canonical_key_is_permutation_invariant(c, seed):
    clauses = list(c.clauses)
    seed.shuffle(clauses)
    assert Conjunction(tuple(clauses)).key == c.key
    assert bl.canonical_clauses(Conjunction(tuple(clauses))) == bl.canonical_clauses(c)


def _reference(op: str, a: int, b: int, w: int) -> int | bool:
    m = (1 << w) - 1

    def signed(v: int) -> int:
        return v - (1 << w) if v >> (w - 1) else v

    return {
        "add": (a + b) & m,
        "mul": (a * b) & m,
        "udiv": a // b if b else m,
        "urem": a % b if b else a,
        "and": a & b,
        "or": a | b,
        "xor": a ^ b,
        "shl": (a << b) & m if b < w else 0,
        "lshr": a >> b if b < w else 0,
        "sub": (a - b) & m,
        "ule": a <= b,
        "sle": signed(a) <= signed(b),
        "ult": a < b,
        "slt": signed(a) < signed(b),
    }[op]


FACTORY = {
    "add": bl.add,
    "mul": bl.mul,
    "udiv": bl.udiv,
    "urem": bl.urem,
    "and": bl.bvand,
    "or": bl.bvor,
    "xor": bl.bvxor,
    "shl": bl.shl,
    "lshr": bl.lshr,
    "sub": bl.sub,
    "ule": bl.ule,
    "sle": bl.sle,
    "ult": bl.ult,
    "slt": bl.slt,
}


@given(
    op=st.sampled_from(sorted(FACTORY)),
    w=st.integers(1, 64),
    data=st.data(),
)
@STANDARD_SETTINGS
def test_evaluate_matches_reference_semantics(op, w, data):
    a = data.draw(st.integers(0, (1 << w) - 1))
    b = data.draw(st.integers(0, (1 << w) - 1))
    x = bl.var(VarId(1, 0, 1), w)
    y = bl.var(VarId(1, 1, 1), w)
    assert bl.evaluate(FACTORY[op](x, y), {x.var: a, y.var: b}) == _reference(op, a, b, w)


@given(value=st.integers(-100, 100), w=st.integers(1, 8))
@QUICK_SETTINGS
def test_negation(value, w):
    assert bl.evaluate(bl.add(bl.neg(bl.const(value, w)), bl.const(value, w)), {}) == 0
