from __future__ import annotations

from collections.abc import Sequence

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cedsmc_app import bvlogic as bl
from cedsmc_app.bvlogic import Conjunction, Var, VarId
from cedsmc_app.errors import ShapeMismatch
from cedsmc_app.multistate import (
    Monolithic,
    MultiState,
    Sliced,
    StoreKind,
    apply_instruction,
    dump,
    enabled_steps,
    initial_state,
    match_parts,
    match_states,
    p_vars,
    slice,
    syntactically_equal,
)
from cedsmc_app.progmodel import Frame, Halt, Mark, ProgVar, parse_program
from tests.settings import STANDARD_SETTINGS
from tests.strategies import conjunctions, pool, solutions

TWO_READS = """
fn main() {
  var x: u{w};
  var y: u{w};
  x = nondet();
  y = x + 5;
  x = x + 10;
  if (x <=s y) goto inc else goto end;
label inc:
  y = y + 1;
label end:
}
"""


def _v(pos: int, gen: int, width: int = 8, segment: int = 0) -> Var:
    return bl.var(VarId(segment, pos, gen), width)


def _c(value: int, width: int = 8) -> bl.Const:
    return bl.const(value, width)


def _clause_sets(parts: Sequence[Conjunction]) -> list[frozenset[bytes]]:
    return [frozenset(bl.canonical_key(Conjunction((c,))) for c in p.clauses) for p in parts]


def _first_path(program, state: MultiState) -> MultiState:
    """Follow the first successor of thread 0 until it reaches a halt."""
    while True:
        thread, instr = enabled_steps(program, state)[0]
        if isinstance(instr, Halt):
            return state
        state = apply_instruction(program, state, thread, instr)[0]


@pytest.mark.parametrize("store", list(StoreKind))
def test_worked_example_symbolic_part(store):
    program = parse_program(TWO_READS.replace("{w}", "8"))
    final = _first_path(program, initial_state(program, store))

    x1, x2, y1, y2 = _v(0, 1), _v(0, 2), _v(1, 1), _v(1, 2)
    expected = Conjunction(
        (
            bl.eq(y1, bl.add(x1, _c(5))),
            bl.eq(x2, bl.add(x1, _c(10))),
            bl.sle(x2, y1),
            bl.eq(y2, bl.add(y1, _c(1))),
        )
    )
    assert len(final.parts) == 1
    names = {ProgVar(0, 0): "x", ProgVar(0, 1): "y"}
    assert dump(final) == dump(expected, names)
    assert set(dump(final).strip().split(" & ")) == {
        "(y^1 = (x^1 + 5))",
        "(x^2 = (x^1 + 10))",
        "(x^2 <=s y^1)",
        "(y^2 = (y^1 + 1))",
    }
    assert final.gens == {ProgVar(0, 0): 2, ProgVar(0, 1): 2}


def test_worked_example_branch_has_two_non_empty_outcomes(make_checker):
    program = parse_program(TWO_READS.replace("{w}", "4"))
    state = initial_state(program)
    for _ in range(3):
        thread, instr = enabled_steps(program, state)[0]
        (state,) = apply_instruction(program, state, thread, instr)

    thread, instr = enabled_steps(program, state)[0]
    taken, skipped = apply_instruction(program, state, thread, instr)
    assert taken.control.top(0).pc == 4
    assert skipped.control.top(0).pc == 5

    checker = make_checker()
    assert not checker.is_empty(taken)
    assert not checker.is_empty(skipped)


def test_initial_state_is_top():
    program = parse_program("fn main() { var x: u4; }")
    s = initial_state(program)
    assert s.parts == ()
    assert s.gens == {}
    assert initial_state(program, StoreKind.MONOLITHIC).parts[0].is_top


def test_input_adds_a_vacuous_equality():
    program = parse_program("fn main() { var x: u4; x = nondet(); }")
    s = initial_state(program)
    (succ,) = apply_instruction(program, s, 0, program.main.body[0])
    assert dump(succ) == "(x^1 = x^1)\n"
    assert succ.gens[ProgVar(0, 0)] == 1


def test_assert_yields_pass_and_error_successors():
    program = parse_program("fn main() { var x: u4; x = nondet(); assert(x <=u 3); }")
    (s,) = apply_instruction(program, initial_state(program), 0, program.main.body[0])
    ok, bad = apply_instruction(program, s, 0, program.main.body[1])
    assert (ok.error, ok.control.top(0).pc) == (False, 2)
    assert (bad.error, bad.control.top(0).pc) == (True, 1)
    assert dump(ok) == "(x^1 <=u 3)\n"
    assert dump(bad) == "!(x^1 <=u 3)\n"


def test_ground_conditions_do_not_fork():
    program = parse_program("fn main() { assert(false); }")
    (bad,) = apply_instruction(program, initial_state(program), 0, program.main.body[0])
    assert bad.error

    program = parse_program("fn main() { var k: u4 explicit; k = 3; if (k == 3) goto a; k = 0; label a: }")
    s = initial_state(program)
    (s,) = apply_instruction(program, s, 0, program.main.body[0])
    assert s.shape.descriptor(ProgVar(0, 0)).mark is Mark.EXPLICIT
    assert s.shape.descriptor(ProgVar(0, 0)).value == 3
    assert s.parts == ()
    (s,) = apply_instruction(program, s, 0, program.main.body[1])
    assert s.control.top(0).pc == 3


def test_explicit_variable_is_demoted_by_symbolic_write():
    program = parse_program("fn main() { var k: u4 explicit; var x: u4; k = 1; x = nondet(); k = x; }")
    s = initial_state(program)
    for pc in range(3):
        (s,) = apply_instruction(program, s, 0, program.main.body[pc])
    desc = s.shape.descriptor(ProgVar(0, 0))
    assert (desc.mark, desc.value) == (Mark.SYMBOLIC, None)
    assert dump(s) == "(k^1 = x^1)\n"


CALLS = """
fn f(a: u4): u4 {
  var r: u4;
  r = a + 1;
  return r;
}
fn main() {
  var x: u4;
  x = nondet();
  x = call f(x);
  x = call f(x);
}
"""


def test_call_and_return():
    program = parse_program(CALLS)
    s = initial_state(program)
    (s,) = apply_instruction(program, s, 0, program.main.body[0])
    (s,) = apply_instruction(program, s, 0, program.main.body[1])

    assert s.control.stacks == ((Frame("main", 1, 0), Frame("f", 0, 1)),)
    assert s.shape.get(1).function == "f"
    assert s.gens[ProgVar(1, 0)] == 1

    f = program.function("f")
    (s,) = apply_instruction(program, s, 0, f.body[0])
    (s,) = apply_instruction(program, s, 0, f.body[1])
    assert s.control.stacks == ((Frame("main", 2, 0),),)
    assert 1 not in s.shape
    assert s.gens[ProgVar(0, 0)] == 2
    # dead segment variables keep their clauses under positional names
    assert "s1p1^1" in dump(s)

    (s,) = apply_instruction(program, s, 0, program.main.body[2])
    assert s.gens[ProgVar(1, 0)] == 2
    # the reused segment's local gets a fresh generation
    assert s.gens[ProgVar(1, 1)] == 2


def test_spawn_join_halt():
    program = parse_program(
        """
        var g: u4;
        fn w() { g = 1; }
        fn main() { g = 0; spawn w; join; }
        """
    )
    s = initial_state(program)
    (s,) = apply_instruction(program, s, 0, program.main.body[0])
    (s,) = apply_instruction(program, s, 0, program.main.body[1])
    assert s.control.thread_count == 2
    assert s.control.top(1) == Frame("w", 0, 2)
    assert [t for t, _ in enabled_steps(program, s)] == [1]

    (s,) = apply_instruction(program, s, 1, program.function("w").body[0])
    (s,) = apply_instruction(program, s, 1, program.function("w").body[1])
    assert s.control.halted(1)
    assert 2 not in s.shape

    (s,) = apply_instruction(program, s, 0, program.main.body[2])
    assert s.control.thread_count == 1
    (s,) = apply_instruction(program, s, 0, program.main.body[3])
    assert s.control.stacks == ((),)
    assert [seg.id for seg in s.shape.segments] == [0]


# Slicing

EX_X, EX_Y, EX_Z, EX_A, EX_B, EX_C, EX_D = (_v(i, 1) for i in range(7))
EX31 = [
    bl.eq(EX_X, bl.add(EX_Y, EX_Z)),
    bl.ult(EX_C, EX_B),
    bl.eq(EX_Z, EX_A),
    bl.ult(_c(0), EX_D),
]


def test_p_vars():
    x1, y1, y2 = _v(0, 1), _v(1, 1), _v(1, 2)
    c = Conjunction((bl.eq(x1, y2), bl.eq(y2, bl.add(y1, _c(1)))))
    assert p_vars(c) == {ProgVar(0, 0), ProgVar(0, 1)}
    assert p_vars(Conjunction()) == frozenset()


def test_slice_example():
    parts = slice(Conjunction(tuple(EX31)))
    assert [p.clauses for p in parts] == [(EX31[0], EX31[2]), (EX31[1],), (EX31[3],)]
    assert slice(Conjunction((EX31[0],))) == [Conjunction((EX31[0],))]


def test_conjoin_merges_dependent_parts():
    s = Sliced(tuple(slice(Conjunction(tuple(EX31)))))
    merged = s.conjoin(Conjunction((bl.eq(EX_X, EX_B),)))
    assert _clause_sets(merged.parts) == _clause_sets(
        [Conjunction((EX31[0], EX31[2], EX31[1], bl.eq(EX_X, EX_B))), Conjunction((EX31[3],))]
    )

    fresh = s.conjoin(Conjunction((bl.ule(_v(9, 1), _c(3)),)))
    assert len(fresh.parts) == 4
    assert fresh.parts[:3] == s.parts


def test_conjoin_drops_true_ground_clauses():
    s = Sliced((Conjunction((EX31[0],)),))
    assert s.conjoin(Conjunction((bl.TRUE, bl.ule(_c(1), _c(2))))) is s
    m = Monolithic()
    assert m.conjoin(Conjunction((bl.TRUE,))) is m


def test_sliced_parts_may_not_share_program_variables():
    with pytest.raises(AssertionError):
        Sliced((Conjunction((bl.eq(_v(0, 1), _c(0)),)), Conjunction((bl.eq(_v(0, 2), _c(1)),))))


def _components(c: Conjunction) -> list[frozenset[int]]:
    """Clause indices grouped by a breadth-first walk of the variable-sharing graph."""
    n = len(c.clauses)
    seen: set[int] = set()
    out = []
    for start in range(n):
        if start in seen:
            continue
        group, frontier = {start}, [start]
        while frontier:
            i = frontier.pop()
            for j in range(n):
                if j not in group and c.clauses[i].free_vars & c.clauses[j].free_vars:
                    group.add(j)
                    frontier.append(j)
        seen |= group
        out.append(frozenset(group))
    return out


@given(c=conjunctions(pool([2, 2, 3, 1, 2, 3]), max_size=6))
@STANDARD_SETTINGS
def test_slice_is_maximal(c):
    parts = slice(c)
    expected = _components(c)
    assert len(parts) == len(expected)
    assert sorted(len(p.clauses) for p in parts) == sorted(len(g) for g in expected)
    for i, a in enumerate(parts):
        for b in parts[i + 1 :]:
            assert bl.independent(a, b)
    assert sorted(map(id, (cl for p in parts for cl in p.clauses))) == sorted(map(id, c.clauses))


@given(chunks=st.lists(conjunctions(pool([1, 2, 2, 1, 2]), max_size=2), max_size=5))
@STANDARD_SETTINGS
def test_conjoin_sequence_matches_monolithic_replay(chunks):
    variables = pool([1, 2, 2, 1, 2])
    sliced: Sliced = Sliced()
    mono = Monolithic()
    for chunk in chunks:
        sliced = sliced.conjoin(chunk)
        mono = mono.conjoin(chunk)

    assert {p_vars(p) for p in sliced.parts} == {
        p_vars(p) for p in slice(mono.conj, by_program_var=True)
    }
    assert solutions(sliced.as_conjunction(), variables) == solutions(mono.conj, variables)


# Matching


def _overlapping_matching_sets():
    x1, y1, y2, z1, z2, u1, u2, v1 = (
        _v(0, 1), _v(1, 1), _v(1, 2), _v(2, 1), _v(2, 2), _v(3, 1), _v(3, 2), _v(4, 1),
    )
    phi = [
        Conjunction((bl.eq(x1, y2), bl.eq(y2, bl.add(y1, _c(1))))),
        Conjunction((bl.sle(_c(0), z1),)),
        Conjunction((bl.ule(u1, v1),)),
        Conjunction((bl.eq(u2, _c(5)),)),
    ]
    psi = [
        Conjunction((bl.eq(y2, bl.add(y1, u1)),)),
        Conjunction((bl.sle(_c(3), z1),)),
        Conjunction((bl.eq(z2, _c(5)),)),
        Conjunction((bl.ule(x1, v1),)),
    ]
    phi_m = [
        Conjunction(phi[0].clauses + phi[2].clauses + phi[3].clauses),
        phi[1],
    ]
    psi_m = [
        Conjunction(psi[0].clauses + psi[3].clauses),
        Conjunction(psi[1].clauses + psi[2].clauses),
    ]
    return phi, psi, phi_m, psi_m


def test_match_parts_example():
    phi, psi, phi_m, psi_m = _overlapping_matching_sets()
    a, b = match_parts(phi, psi)
    assert _clause_sets(a) == _clause_sets(phi_m)
    assert _clause_sets(b) == _clause_sets(psi_m)
    names = {ProgVar(0, i): n for i, n in enumerate("xyzuv")}
    assert dump(a, names) == dump(phi_m, names)
    assert dump(b, names) == dump(psi_m, names)


def test_match_identical_partitions_is_identity():
    parts = slice(Conjunction(tuple(EX31)))
    a, b = match_parts(parts, parts)
    assert a == b
    assert _clause_sets(a) == _clause_sets(parts)


def _is_matching(a: Sequence[Conjunction], b: Sequence[Conjunction]) -> bool:
    if len(a) != len(b):
        return False
    pa = [p_vars(x) for x in a]
    pb = [p_vars(y) for y in b]
    for i, (x, y) in enumerate(zip(pa, pb)):
        if x and y and x != y:
            return False
        for j in range(i + 1, len(a)):
            if (x | y) & (pa[j] | pb[j]):
                return False
    return True


@given(data=st.data())
@STANDARD_SETTINGS
def test_match_parts_produces_a_matching(data):
    variables = pool([1, 2, 2, 1, 2, 1])
    left = slice(data.draw(conjunctions(variables, max_size=5)), by_program_var=True)
    right = slice(data.draw(conjunctions(variables, max_size=5)), by_program_var=True)
    a, b = match_parts(left, right)
    assert _is_matching(a, b)
    assert solutions(Conjunction(tuple(c for p in a for c in p.clauses)), variables) == solutions(
        Conjunction(tuple(c for p in left for c in p.clauses)), variables
    )


def test_match_states_requires_the_same_explicit_part():
    program = parse_program("fn main() { var x: u4; x = nondet(); }")
    s = initial_state(program)
    (t,) = apply_instruction(program, s, 0, program.main.body[0])
    with pytest.raises(ShapeMismatch):
        match_states(s, t)


def test_syntactic_equality():
    a, b, c = _v(0, 1, 4), _v(1, 1, 4), _v(2, 1, 4)
    one = Monolithic(Conjunction((bl.ult(_c(0, 4), a), bl.eq(b, c))))
    two = Monolithic(Conjunction((bl.eq(b, c), bl.ult(_c(0, 4), a))))
    assert syntactically_equal(one, two)
    assert syntactically_equal(
        Sliced(tuple(slice(one.conj))), Sliced(tuple(reversed(slice(two.conj))))
    )

    x, y = _v(0, 1, 4), _v(1, 1, 4)
    left = Monolithic(Conjunction((bl.eq(x, _c(1, 4)), bl.eq(y, x))))
    right = Monolithic(Conjunction((bl.eq(y, _c(1, 4)), bl.eq(x, y))))
    assert not syntactically_equal(left, right)
    assert solutions(left.conj, [x, y]) == solutions(right.conj, [x, y]) == {(1, 1)}


def test_dump_lists_true_for_empty_parts():
    assert dump([Conjunction()]) == "true\n"
    assert dump(Conjunction((bl.ule(_v(0, 1, 4), _c(3, 4)),))) == "(s0p0^1 <=u 3)\n"
