"""The mini-IR: parser, static checks, pretty-printer, and the explicit
part of states (control part and memory shape).

Program text looks like::

    var g: u8;                      # globals live in segment 0

    fn inc(a: u8): u8 {
      return a + 1;
    }

    fn main() {
      var x: u8;
      x = nondet();
      x = call inc(x);
      if (x <=u 10) goto ok else goto bad;
    label bad:
      assert(false);
    label ok:
    }

One statement is one instruction; `var` and `label` lines are not.
"""

from __future__ import annotations

import enum
import graphlib
import re
from collections.abc import Callable, Iterator
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Protocol

from . import bvlogic as bl
from .errors import (
    ProgramError,
    ProgramSyntaxError,
    RecursionRejected,
    UndeclaredVariable,
    WidthMismatch,
)


ENTRY = "main"
GLOBAL_SEGMENT = 0


# Expressions over program variables


class Scope(enum.Enum):
    LOCAL = "local"
    GLOBAL = "global"


@dataclass(frozen=True)
class Ref:
    scope: Scope
    position: int
    name: str = field(compare=False)
    width: int


@dataclass(frozen=True)
class Lit:
    value: int
    width: int


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expr
    right: Expr
    width: int


@dataclass(frozen=True)
class Extract:
    n: int
    p: int
    arg: Expr

    @property
    def width(self) -> int:
        return self.n


@dataclass(frozen=True)
class Compare:
    op: str
    left: Expr
    right: Expr
    width: int = 0


@dataclass(frozen=True)
class BoolLit:
    value: bool
    width: int = 0


@dataclass(frozen=True)
class Not:
    arg: Expr
    width: int = 0


@dataclass(frozen=True)
class Logic:
    op: str
    args: tuple[Expr, ...]
    width: int = 0


Expr = Ref | Lit | BinOp | Extract | Compare | BoolLit | Not | Logic

COMPARE_OPS = ("==", "!=", "<=u", "<=s", "<u", "<s")

_TERM_BUILDERS: dict[str, Callable[[bl.Term, bl.Term], bl.Term]] = {
    "+": bl.add,
    "-": bl.sub,
    "*": bl.mul,
    "/u": bl.udiv,
    "%": bl.urem,
    "&": bl.bvand,
    "|": bl.bvor,
    "^": bl.bvxor,
    "<<": bl.shl,
    ">>u": bl.lshr,
    "++": bl.concat,
    "==": bl.eq,
    "!=": bl.ne,
    "<=u": bl.ule,
    "<=s": bl.sle,
    "<u": bl.ult,
    "<s": bl.slt,
}


def to_term(expr: Expr, read: Callable[[Ref], bl.Term]) -> bl.Term:
    """Translate a program expression, resolving variables through read."""
    match expr:
        case Ref():
            return read(expr)
        case Lit(value=value, width=width):
            return bl.const(value, width)
        case BoolLit(value=value):
            return bl.TRUE if value else bl.FALSE
        case BinOp(op=op, left=left, right=right) | Compare(op=op, left=left, right=right):
            return _TERM_BUILDERS[op](to_term(left, read), to_term(right, read))
        case Extract(n=n, p=p, arg=arg):
            return bl.extract(to_term(arg, read), n, p)
        case Not(arg=arg):
            return bl.not_(to_term(arg, read))
        case Logic(op=op, args=args):
            terms = [to_term(a, read) for a in args]
            return bl.and_(*terms) if op == "&&" else bl.or_(*terms)
    raise TypeError(f"not an expression: {expr!r}")


# Instructions


@dataclass(frozen=True)
class Assign:
    dst: Ref
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Input:
    dst: Ref
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Branch:
    cond: Expr
    target_true: int
    target_false: int
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Assert:
    cond: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    function: str
    args: tuple[Expr, ...]
    dst: Ref | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Return:
    expr: Expr | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Spawn:
    function: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Join:
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Halt:
    line: int = field(default=0, compare=False)


Instr = Assign | Input | Branch | Assert | Call | Return | Spawn | Join | Halt


@dataclass(frozen=True)
class VarDecl:
    name: str
    width: int
    explicit: bool = False


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[VarDecl, ...]
    locals: tuple[VarDecl, ...]
    body: tuple[Instr, ...]
    ret_width: int | None = None
    labels: dict[str, int] = field(default_factory=dict, compare=False)

    @property
    def variables(self) -> tuple[VarDecl, ...]:
        return self.params + self.locals


@dataclass(frozen=True)
class Program:
    functions: dict[str, Function]
    globals: tuple[VarDecl, ...] = ()
    entry: str = ENTRY

    @property
    def main(self) -> Function:
        return self.functions[self.entry]

    def function(self, name: str) -> Function:
        return self.functions[name]

    def decl(self, segment_function: str, position: int) -> VarDecl:
        if segment_function == GLOBALS:
            return self.globals[position]
        return self.functions[segment_function].variables[position]

    def instr_count(self) -> int:
        return sum(len(f.body) for f in self.functions.values())


# Explicit part of states

GLOBALS = "<globals>"


class Mark(enum.Enum):
    EXPLICIT = "explicit"
    SYMBOLIC = "symbolic"


@dataclass(frozen=True)
class VariableDescriptor:
    name: str
    width: int
    mark: Mark = Mark.SYMBOLIC
    value: int | None = None

    def __post_init__(self) -> None:
        if (self.mark is Mark.EXPLICIT) != (self.value is not None):
            raise ValueError(f"{self.name}: explicit value present iff marked explicit")
        if self.value is not None and not 0 <= self.value < (1 << self.width):
            raise ValueError(f"{self.name}: value {self.value} does not fit u{self.width}")


@dataclass(frozen=True)
class Segment:
    id: int
    function: str
    vars: tuple[VariableDescriptor, ...]


class ProgVar(NamedTuple):
    segment: int
    position: int

    def __str__(self) -> str:
        return f"({self.segment},{self.position})"


@dataclass(frozen=True)
class MemoryShape:
    segments: tuple[Segment, ...] = ()

    def __post_init__(self) -> None:
        ordered = tuple(sorted(self.segments, key=lambda s: s.id))
        ids = [s.id for s in ordered]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate segment ids {ids}")
        object.__setattr__(self, "segments", ordered)

    def __contains__(self, segment_id: object) -> bool:
        return any(s.id == segment_id for s in self.segments)

    def get(self, segment_id: int) -> Segment:
        for s in self.segments:
            if s.id == segment_id:
                return s
        raise KeyError(segment_id)

    def descriptor(self, pv: ProgVar) -> VariableDescriptor:
        return self.get(pv.segment).vars[pv.position]

    def fresh_id(self) -> int:
        used = {s.id for s in self.segments}
        sid = 0
        while sid in used:
            sid += 1
        return sid

    def with_segment(self, seg: Segment) -> MemoryShape:
        return MemoryShape(tuple(s for s in self.segments if s.id != seg.id) + (seg,))

    def without(self, segment_id: int) -> MemoryShape:
        return MemoryShape(tuple(s for s in self.segments if s.id != segment_id))

    def with_descriptor(self, pv: ProgVar, desc: VariableDescriptor) -> MemoryShape:
        seg = self.get(pv.segment)
        vars_ = list(seg.vars)
        vars_[pv.position] = desc
        return self.with_segment(replace(seg, vars=tuple(vars_)))

    def prog_vars(self) -> Iterator[tuple[ProgVar, VariableDescriptor]]:
        for seg in self.segments:
            for pos, desc in enumerate(seg.vars):
                yield ProgVar(seg.id, pos), desc

    def symbolic_vars(self) -> list[ProgVar]:
        return [pv for pv, d in self.prog_vars() if d.mark is Mark.SYMBOLIC]


@dataclass(frozen=True)
class Frame:
    function: str
    pc: int
    segment: int


@dataclass(frozen=True)
class ControlPart:
    """One call stack per thread, bottom frame first. Halted threads have an empty stack."""

    stacks: tuple[tuple[Frame, ...], ...]

    @property
    def thread_count(self) -> int:
        return len(self.stacks)

    def top(self, thread: int) -> Frame:
        return self.stacks[thread][-1]

    def halted(self, thread: int) -> bool:
        return not self.stacks[thread]

    def with_stack(self, thread: int, stack: tuple[Frame, ...]) -> ControlPart:
        stacks = list(self.stacks)
        stacks[thread] = stack
        return ControlPart(tuple(stacks))

    def with_top(self, thread: int, frame: Frame) -> ControlPart:
        return self.with_stack(thread, self.stacks[thread][:-1] + (frame,))

    def spawned(self, frame: Frame) -> ControlPart:
        return ControlPart(self.stacks + ((frame,),))

    def without_thread(self, thread: int) -> ControlPart:
        return ControlPart(self.stacks[:thread] + self.stacks[thread + 1 :])


def new_segment(program: Program, function: str, segment_id: int) -> Segment:
    fn = program.function(function)
    return Segment(segment_id, function, tuple(VariableDescriptor(d.name, d.width) for d in fn.variables))


def initial_shape(program: Program) -> MemoryShape:
    shape = MemoryShape()
    if program.globals:
        shape = shape.with_segment(
            Segment(GLOBAL_SEGMENT, GLOBALS, tuple(VariableDescriptor(d.name, d.width) for d in program.globals))
        )
    return shape.with_segment(new_segment(program, program.entry, shape.fresh_id()))


def initial_control(program: Program, shape: MemoryShape | None = None) -> ControlPart:
    shape = shape or initial_shape(program)
    main_segment = next(s.id for s in shape.segments if s.function == program.entry)
    return ControlPart(((Frame(program.entry, 0, main_segment),),))


class HasControl(Protocol):
    @property
    def control(self) -> ControlPart: ...


def enabled_steps(program: Program, state: ControlPart | HasControl) -> list[tuple[int, Instr]]:
    """Runnable (thread, instruction) pairs in thread order.

    `join;` in thread t waits for thread t+1 (the next one in spawn order)
    to halt; with no such thread it is a no-op.
    """
    control = state if isinstance(state, ControlPart) else state.control
    steps: list[tuple[int, Instr]] = []
    for t, stack in enumerate(control.stacks):
        if not stack:
            continue
        frame = stack[-1]
        instr = program.function(frame.function).body[frame.pc]
        if isinstance(instr, Join) and t + 1 < control.thread_count and not control.halted(t + 1):
            continue
        steps.append((t, instr))
    return steps


# Lexer

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\f]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<num>0x[0-9a-fA-F]+|0b[01]+|[0-9]+)(?::u(?P<numw>[0-9]+))?
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=u|<=s|>>u|/u|<<|<u|<s|==|!=|&&|\|\||\+\+|[-+*%&|^!(){};:,=])
    """,
    re.VERBOSE,
)

KEYWORDS = frozenset(
    {"fn", "var", "explicit", "label", "if", "goto", "else", "assert", "nondet", "call",
     "return", "spawn", "join", "halt", "extract", "true", "false"}
)


class Token(NamedTuple):
    kind: str
    text: str
    line: int
    column: int
    width: int | None = None


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ProgramSyntaxError(f"unexpected character {text[pos]!r}", line=line, column=pos - line_start + 1)
        kind = m.lastgroup if m.lastgroup != "numw" else "num"
        col = pos - line_start + 1
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind == "num":
            width = int(m.group("numw")) if m.group("numw") else None
            tokens.append(Token("num", m.group("num"), line, col, width))
        elif kind == "name":
            word = m.group()
            tokens.append(Token("kw" if word in KEYWORDS else "name", word, line, col))
        elif kind == "op":
            tokens.append(Token("op", m.group(), line, col))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# Parser


@dataclass
class _Raw:
    """Untyped literal awaiting a width from its context."""

    value: int
    line: int
    column: int


@dataclass
class _FunctionDraft:
    name: str
    params: list[VarDecl]
    ret_width: int | None
    line: int
    locals: list[VarDecl] = field(default_factory=list)
    body: list = field(default_factory=list)
    labels: dict[str, int] = field(default_factory=dict)
    label_refs: list[tuple[str, Token]] = field(default_factory=list)


_WIDTH = re.compile(r"u([0-9]+)")


class _Parser:
    def __init__(self, text: str) -> None:
        self.tokens = tokenize(text)
        self.pos = 0
        self.globals: list[VarDecl] = []
        self.signatures: dict[str, _FunctionDraft] = {}
        self.fn: _FunctionDraft | None = None

    # token helpers

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def error(self, message: str, tok: Token | None = None, cls: type[ProgramError] = ProgramSyntaxError) -> ProgramError:
        tok = tok or self.tok
        return cls(message, line=tok.line, column=tok.column)

    def at(self, text: str) -> bool:
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.pos += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            raise self.error(f"expected {text!r}, found {shown!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def expect_name(self) -> Token:
        if self.tok.kind != "name":
            shown = self.tok.text or "end of input"
            raise self.error(f"expected a name, found {shown!r}")
        tok = self.tok
        self.pos += 1
        return tok

    def expect_int(self) -> int:
        if self.tok.kind != "num" or self.tok.width is not None:
            raise self.error("expected an integer")
        value = int(self.tok.text, 0)
        self.pos += 1
        return value

    def expect_width(self) -> int:
        tok = self.expect_name()
        m = _WIDTH.fullmatch(tok.text)
        if m is None:
            raise self.error(f"expected a type uN, found {tok.text!r}", tok)
        width = int(m.group(1))
        if not 1 <= width <= bl.MAX_WIDTH:
            raise self.error(f"width {width} outside [1, {bl.MAX_WIDTH}]", tok, WidthMismatch)
        return width

    # program structure

    def parse(self) -> Program:
        start = self.pos
        # First pass collects signatures so calls may refer forward.
        while self.tok.kind != "eof":
            if self.at("var"):
                self.globals.append(self.var_decl(self.globals))
            elif self.at("fn"):
                draft = self.signature()
                if draft.name in self.signatures:
                    raise self.error(f"function {draft.name!r} defined twice")
                self.signatures[draft.name] = draft
                self.skip_body()
            else:
                raise self.error(f"expected 'fn' or 'var', found {self.tok.text!r}")

        self.pos = start
        functions: dict[str, Function] = {}
        while self.tok.kind != "eof":
            if self.at("var"):
                self.var_decl([])
                continue
            draft = self.signatures[self.signature().name]
            self.fn = draft
            functions[draft.name] = self.body(draft)
            self.fn = None

        if ENTRY not in functions:
            raise ProgramError("program has no 'main' function")
        if functions[ENTRY].params:
            raise ProgramError("'main' takes no parameters", line=self.signatures[ENTRY].line)
        program = Program(functions, tuple(self.globals))
        _check_calls(program, self.signatures)
        return program

    def var_decl(self, scope: list[VarDecl]) -> VarDecl:
        self.expect("var")
        name = self.expect_name()
        self.expect(":")
        width = self.expect_width()
        explicit = self.accept("explicit")
        self.expect(";")
        if any(d.name == name.text for d in scope):
            raise self.error(f"variable {name.text!r} declared twice", name)
        return VarDecl(name.text, width, explicit)

    def signature(self) -> _FunctionDraft:
        kw = self.expect("fn")
        name = self.expect_name()
        self.expect("(")
        params: list[VarDecl] = []
        while not self.at(")"):
            if params:
                self.expect(",")
            pname = self.expect_name()
            self.expect(":")
            width = self.expect_width()
            explicit = self.accept("explicit")
            if any(p.name == pname.text for p in params):
                raise self.error(f"parameter {pname.text!r} declared twice", pname)
            params.append(VarDecl(pname.text, width, explicit))
        self.expect(")")
        ret_width = self.expect_width() if self.accept(":") else None
        return _FunctionDraft(name.text, params, ret_width, kw.line)

    def skip_body(self) -> None:
        self.expect("{")
        depth = 1
        while depth:
            if self.tok.kind == "eof":
                raise self.error("unterminated function body")
            if self.at("{"):
                depth += 1
            elif self.at("}"):
                depth -= 1
            self.pos += 1

    def body(self, draft: _FunctionDraft) -> Function:
        draft.locals, draft.body, draft.labels, draft.label_refs = [], [], {}, []
        self.expect("{")
        while not self.accept("}"):
            if self.tok.kind == "eof":
                raise self.error("unterminated function body")
            self.statement(draft)

        body = draft.body
        end = len(body)
        if draft.name == ENTRY:
            body.append(Halt(line=self.tokens[self.pos - 1].line))
        elif not body or not isinstance(body[-1], (Return, Halt)) or end in draft.labels.values():
            body.append(Return(line=self.tokens[self.pos - 1].line))

        resolved = [self.resolve_labels(draft, instr) for instr in body]
        return Function(
            draft.name,
            tuple(draft.params),
            tuple(draft.locals),
            tuple(resolved),
            draft.ret_width,
            dict(draft.labels),
        )

    def resolve_labels(self, draft: _FunctionDraft, instr):
        if not isinstance(instr, _BranchDraft):
            return instr
        targets = []
        for label in (instr.label_true, instr.label_false):
            if isinstance(label, int):
                targets.append(label)
                continue
            if label.text not in draft.labels:
                raise self.error(f"undefined label {label.text!r}", label)
            targets.append(draft.labels[label.text])
        return Branch(instr.cond, targets[0], targets[1], line=instr.line)

    # statements

    def statement(self, fn: _FunctionDraft) -> None:
        tok = self.tok
        if self.at("var"):
            decl = self.var_decl(fn.params + fn.locals)
            fn.locals.append(decl)
            return
        if self.accept("label"):
            name = self.expect_name()
            self.expect(":")
            if name.text in fn.labels:
                raise self.error(f"label {name.text!r} defined twice", name)
            fn.labels[name.text] = len(fn.body)
            return
        fn.body.append(self.instruction(fn, tok))

    def instruction(self, fn: _FunctionDraft, tok: Token):
        line = tok.line
        if self.accept("if"):
            self.expect("(")
            cond = self.condition()
            self.expect(")")
            self.expect("goto")
            label_true = self.expect_name()
            if self.accept("else"):
                self.expect("goto")
                label_false: Token | int = self.expect_name()
            else:
                label_false = len(fn.body) + 1
            self.expect(";")
            return _BranchDraft(cond, label_true, label_false, line)
        if self.accept("goto"):
            label = self.expect_name()
            self.expect(";")
            return _BranchDraft(BoolLit(True), label, label, line)
        if self.accept("assert"):
            self.expect("(")
            cond = self.condition()
            self.expect(")")
            self.expect(";")
            return Assert(cond, line=line)
        if self.accept("call"):
            call = self.call_tail(None, line)
            self.expect(";")
            return call
        if self.accept("return"):
            expr = None
            if not self.at(";"):
                expr = self.typed(self.expr(), fn.ret_width, tok)
                if fn.ret_width is None:
                    raise self.error(f"function {fn.name!r} has no return type", tok, WidthMismatch)
            self.expect(";")
            return Return(expr, line=line)
        if self.accept("spawn"):
            name = self.expect_name()
            self.expect(";")
            target = self.signatures.get(name.text)
            if target is None:
                raise self.error(f"unknown function {name.text!r}", name)
            if target.params:
                raise self.error(f"spawned function {name.text!r} must take no parameters", name)
            return Spawn(name.text, line=line)
        if self.accept("join"):
            self.expect(";")
            return Join(line=line)
        if self.accept("halt"):
            self.expect(";")
            return Halt(line=line)

        if self.tok.kind == "name":
            dst = self.lookup(self.expect_name())
            self.expect("=")
            if self.accept("nondet"):
                self.expect("(")
                self.expect(")")
                self.expect(";")
                return Input(dst, line=line)
            if self.accept("call"):
                call = self.call_tail(dst, line)
                self.expect(";")
                return call
            expr = self.typed(self.expr(), dst.width, tok)
            self.expect(";")
            return Assign(dst, expr, line=line)
        raise self.error(f"expected a statement, found {self.tok.text or 'end of input'!r}")

    def call_tail(self, dst: Ref | None, line: int) -> Call:
        name = self.expect_name()
        target = self.signatures.get(name.text)
        if target is None:
            raise self.error(f"unknown function {name.text!r}", name)
        self.expect("(")
        args: list[Expr] = []
        while not self.at(")"):
            if args:
                self.expect(",")
            at = self.tok
            raw = self.expr()
            if len(args) >= len(target.params):
                raise self.error(f"too many arguments for {name.text!r}", at)
            args.append(self.typed(raw, target.params[len(args)].width, at))
        self.expect(")")
        if len(args) != len(target.params):
            raise self.error(f"{name.text!r} expects {len(target.params)} arguments, got {len(args)}", name)
        if dst is not None:
            if target.ret_width is None:
                raise self.error(f"{name.text!r} returns no value", name, WidthMismatch)
            if target.ret_width != dst.width:
                raise self.error(
                    f"{name.text!r} returns u{target.ret_width}, assigned to u{dst.width}", name, WidthMismatch
                )
        return Call(name.text, tuple(args), dst, line=line)

    def lookup(self, tok: Token) -> Ref:
        assert self.fn is not None
        for pos, decl in enumerate(self.fn.params + self.fn.locals):
            if decl.name == tok.text:
                return Ref(Scope.LOCAL, pos, decl.name, decl.width)
        for pos, decl in enumerate(self.globals):
            if decl.name == tok.text:
                return Ref(Scope.GLOBAL, pos, decl.name, decl.width)
        raise self.error(f"undeclared variable {tok.text!r}", tok, UndeclaredVariable)

    # conditions: || < && < ! < comparison

    def condition(self):
        args = [self.conjunct()]
        while self.accept("||"):
            args.append(self.conjunct())
        return args[0] if len(args) == 1 else Logic("||", tuple(args))

    def conjunct(self):
        args = [self.negation()]
        while self.accept("&&"):
            args.append(self.negation())
        return args[0] if len(args) == 1 else Logic("&&", tuple(args))

    def negation(self):
        if self.accept("!"):
            return Not(self.negation())
        if self.accept("true"):
            return BoolLit(True)
        if self.accept("false"):
            return BoolLit(False)
        if self.at("("):
            saved = self.pos
            try:
                return self.comparison()
            except ProgramSyntaxError:
                self.pos = saved
            self.expect("(")
            inner = self.condition()
            self.expect(")")
            return inner
        return self.comparison()

    def comparison(self) -> Compare:
        at = self.tok
        left = self.expr()
        op = self.tok
        if op.kind != "op" or op.text not in COMPARE_OPS:
            raise self.error(f"expected a comparison operator, found {op.text or 'end of input'!r}")
        self.pos += 1
        right = self.expr()
        width = _natural_width(left) or _natural_width(right)
        if width is None:
            raise self.error("cannot infer the width of a comparison between literals", at, WidthMismatch)
        return Compare(op.text, self.typed(left, width, at), self.typed(right, width, at))

    # expressions: | < ^ < & < ++ < shifts < + - < * /u %

    _LEVELS: tuple[tuple[str, ...], ...] = (("|",), ("^",), ("&",), ("++",), ("<<", ">>u"), ("+", "-"), ("*", "/u", "%"))

    def expr(self, level: int = 0):
        if level == len(self._LEVELS):
            return self.atom()
        left = self.expr(level + 1)
        while self.tok.kind == "op" and self.tok.text in self._LEVELS[level]:
            op = self.tok
            self.pos += 1
            right = self.expr(level + 1)
            left = self.binop(op, left, right)
        return left

    def binop(self, op: Token, left, right) -> BinOp | _RawBin:
        if op.text == "++":
            lw, rw = _natural_width(left), _natural_width(right)
            if lw is None or rw is None:
                raise self.error("concat operands need explicit widths", op, WidthMismatch)
            if lw + rw > bl.MAX_WIDTH:
                raise self.error(f"concat result u{lw + rw} exceeds u{bl.MAX_WIDTH}", op, WidthMismatch)
            return BinOp("++", self.typed(left, lw, op), self.typed(right, rw, op), lw + rw)
        lw, rw = _natural_width(left), _natural_width(right)
        if lw is not None and rw is not None and lw != rw:
            raise self.error(f"operands of {op.text!r} have widths u{lw} and u{rw}", op, WidthMismatch)
        width = lw if lw is not None else rw
        if width is None:
            return _RawBin(op.text, left, right, op)
        return BinOp(op.text, self.typed(left, width, op), self.typed(right, width, op), width)

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.pos += 1
            value = int(tok.text, 0)
            if tok.width is None:
                return _Raw(value, tok.line, tok.column)
            if not 1 <= tok.width <= bl.MAX_WIDTH or value >= (1 << tok.width):
                raise self.error(f"literal {tok.text} does not fit u{tok.width}", tok, WidthMismatch)
            return Lit(value, tok.width)
        if tok.kind == "name":
            self.pos += 1
            return self.lookup(tok)
        if self.accept("extract"):
            self.expect("(")
            n = self.expect_int()
            self.expect(",")
            p = self.expect_int()
            self.expect(",")
            arg = self.expr()
            self.expect(")")
            width = _natural_width(arg)
            if width is None:
                raise self.error("extract needs an operand of known width", tok, WidthMismatch)
            if n < 1 or p + n > width:
                raise self.error(f"extract({n}, {p}) out of range for u{width}", tok, WidthMismatch)
            return Extract(n, p, self.typed(arg, width, tok))
        if self.accept("("):
            inner = self.expr()
            self.expect(")")
            return inner
        raise self.error(f"expected an expression, found {tok.text or 'end of input'!r}")

    def typed(self, expr, width: int | None, at: Token) -> Expr:
        """Fix the width of untyped literals; check it against width."""
        if isinstance(expr, _Raw):
            if width is None:
                raise self.error("cannot infer the width of a literal", at, WidthMismatch)
            if expr.value >= (1 << width):
                raise ProgramSyntaxError(f"literal {expr.value} does not fit u{width}", line=expr.line, column=expr.column)
            return Lit(expr.value, width)
        if isinstance(expr, _RawBin):
            if width is None:
                raise self.error("cannot infer the width of a literal expression", at, WidthMismatch)
            return BinOp(expr.op, self.typed(expr.left, width, at), self.typed(expr.right, width, at), width)
        if width is not None and expr.width != width:
            raise self.error(f"expected u{width}, found u{expr.width}", at, WidthMismatch)
        return expr


@dataclass
class _RawBin:
    op: str
    left: object
    right: object
    at: Token


@dataclass
class _BranchDraft:
    cond: Expr
    label_true: Token | int
    label_false: Token | int
    line: int


def _natural_width(expr) -> int | None:
    if isinstance(expr, (_Raw, _RawBin)):
        return None
    return expr.width


def _check_calls(program: Program, drafts: dict[str, _FunctionDraft]) -> None:
    graph: dict[str, set[str]] = {name: set() for name in program.functions}
    for fn in program.functions.values():
        for instr in fn.body:
            if isinstance(instr, Call):
                graph[fn.name].add(instr.function)
    try:
        tuple(graphlib.TopologicalSorter(graph).static_order())
    except graphlib.CycleError as e:
        cycle = " -> ".join(e.args[1])
        first = e.args[1][0]
        raise RecursionRejected(f"recursive calls: {cycle}", line=drafts[first].line) from e


def parse_program(text: str) -> Program:
    return _Parser(text).parse()


# Printer


def format_expr(expr: Expr) -> str:
    match expr:
        case Ref(name=name):
            return name
        case Lit(value=value, width=width):
            return f"{value}:u{width}"
        case BoolLit(value=value):
            return "true" if value else "false"
        case BinOp(op=op, left=left, right=right):
            return f"({format_expr(left)} {op} {format_expr(right)})"
        case Extract(n=n, p=p, arg=arg):
            return f"extract({n}, {p}, {format_expr(arg)})"
        case Compare(op=op, left=left, right=right):
            return f"{format_expr(left)} {op} {format_expr(right)}"
        case Not(arg=arg):
            return f"!({format_expr(arg)})"
        case Logic(op=op, args=args):
            return "(" + f" {op} ".join(f"({format_expr(a)})" for a in args) + ")"
    raise TypeError(f"not an expression: {expr!r}")


def _format_decl(d: VarDecl) -> str:
    return f"{d.name}: u{d.width}" + (" explicit" if d.explicit else "")


def format_program(program: Program) -> str:
    """Render program as parseable text; parse(format(p)) == p."""
    out: list[str] = []
    for d in program.globals:
        out.append(f"var {_format_decl(d)};")
    if program.globals:
        out.append("")

    for fn in program.functions.values():
        params = ", ".join(_format_decl(d) for d in fn.params)
        ret = f": u{fn.ret_width}" if fn.ret_width is not None else ""
        out.append(f"fn {fn.name}({params}){ret} {{")
        for d in fn.locals:
            out.append(f"  var {_format_decl(d)};")

        body = fn.body[:-1] if fn.name == program.entry else fn.body
        targets = sorted({t for i in body if isinstance(i, Branch) for t in (i.target_true, i.target_false)})
        for index, instr in enumerate(body):
            if index in targets:
                out.append(f"label L{index}:")
            out.append("  " + _format_instr(instr))
        if len(body) in targets:
            out.append(f"label L{len(body)}:")
        out.append("}")
        out.append("")
    return "\n".join(out)


def _format_instr(instr: Instr) -> str:
    match instr:
        case Assign(dst=dst, expr=expr):
            return f"{dst.name} = {format_expr(expr)};"
        case Input(dst=dst):
            return f"{dst.name} = nondet();"
        case Branch(cond=cond, target_true=t, target_false=f):
            return f"if ({format_expr(cond)}) goto L{t} else goto L{f};"
        case Assert(cond=cond):
            return f"assert({format_expr(cond)});"
        case Call(function=fn, args=args, dst=dst):
            call = f"call {fn}({', '.join(format_expr(a) for a in args)});"
            return f"{dst.name} = {call}" if dst is not None else call
        case Return(expr=expr):
            return "return;" if expr is None else f"return {format_expr(expr)};"
        case Spawn(function=fn):
            return f"spawn {fn};"
        case Join():
            return "join;"
        case Halt():
            return "halt;"
    raise TypeError(f"not an instruction: {instr!r}")


def describe(program: Program, frame: Frame) -> str:
    instr = program.function(frame.function).body[frame.pc]
    return f"{frame.function}:{frame.pc}: {_format_instr(instr)}"
