"""Lexer, parser, pretty-printer and validator for ``.nil`` programs.

Concrete syntax (``#`` starts a line comment)::

    low l, x;            # adversary-observable globals
    high h, y;           # secret globals
    assume y = 0;        # precondition on every initial store

    proc main() {
        func(h, l);
    }

    proc func(in a, out b) {
        letvar c := 0 in {
            while (a > 0) { c++; a--; }
            b := c;
        }
    }

``c++`` and ``a--`` are sugar for ``c := c + 1`` and ``a := a - 1``.  A call
``f(e, g)`` passes ``e`` by value and binds the callee's ``out`` parameter to
the global ``g``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Union

from .errors import LexError, ParseError, ValidationError


# --------------------------------------------------------------------------
# tokens


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int

    def __repr__(self) -> str:
        if self.kind in ("IDENT", "NUM"):
            return f"{self.kind} {self.text}"
        return self.kind


KEYWORDS = {
    "skip": "KW_SKIP",
    "if": "KW_IF",
    "else": "KW_ELSE",
    "while": "KW_WHILE",
    "letvar": "KW_LETVAR",
    "in": "KW_IN",
    "out": "KW_OUT",
    "proc": "KW_PROC",
    "low": "KW_LOW",
    "high": "KW_HIGH",
    "assume": "KW_ASSUME",
    "true": "KW_TRUE",
    "false": "KW_FALSE",
}

# order matters: longer operators first
_OPERATORS = [
    (":=", "ASSIGN"),
    ("++", "INCR"),
    ("--", "DECR"),
    ("<=", "LE"),
    (">=", "GE"),
    ("==", "EQ"),
    ("!=", "NE"),
    ("&&", "AND"),
    ("||", "OR"),
    ("=", "EQ"),
    ("<", "LT"),
    (">", "GT"),
    ("!", "NOT"),
    ("+", "PLUS"),
    ("-", "MINUS"),
    ("*", "STAR"),
    (";", "SEMI"),
    (",", "COMMA"),
    ("(", "LPAREN"),
    (")", "RPAREN"),
    ("{", "LBRACE"),
    ("}", "RBRACE"),
]

# `x#1` is an identifier (alpha-renamed binder); `#` anywhere else opens a comment
_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r\n]+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*(?:\#[0-9]+)?)"
    r"|(?P<num>[0-9]+)"
    r"|(?P<comment>\#[^\n]*)"
    r"|(?P<op>" + "|".join(re.escape(op) for op, _ in _OPERATORS) + ")"
)
_OP_KIND = dict(_OPERATORS)


def tokenize(source: str) -> list[Token]:
    """Split ``source`` into tokens (no trailing EOF token).

    Identifiers use maximal munch, so ``whilex`` is one identifier.
    """
    tokens: list[Token] = []
    pos = 0
    line, col = 1, 1
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise LexError(f"unexpected character {source[pos]!r}", line, col)
        text = m.group()
        kind = m.lastgroup
        if kind == "ident":
            tokens.append(Token(KEYWORDS.get(text, "IDENT"), text, line, col))
        elif kind == "num":
            tokens.append(Token("NUM", text, line, col))
        elif kind == "op":
            tokens.append(Token(_OP_KIND[text], text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        pos = m.end()
    return tokens


# --------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class Span:
    line: int
    col: int

    def __str__(self) -> str:
        return f"{self.line}:{self.col}"


@dataclass(frozen=True)
class Name:
    name: str
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Const:
    value: int
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class UnOp:
    op: str  # only "!"
    operand: "Expr"
    span: Span | None = field(default=None, compare=False, repr=False)


Expr = Union[Name, Const, BinOp, UnOp]

ARITH_OPS = ("+", "-", "*")
COMPARE_OPS = ("<", "<=", ">", ">=", "=", "!=")
LOGIC_OPS = ("&&", "||")
BINARY_OPS = ARITH_OPS + COMPARE_OPS + LOGIC_OPS


@dataclass(frozen=True)
class Skip:
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Assign:
    target: str
    expr: Expr
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    orelse: "Stmt"
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class While:
    cond: Expr
    body: "Stmt"
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Seq:
    stmts: tuple["Stmt", ...]
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Letvar:
    name: str
    init: Expr
    body: "Stmt"
    span: Span | None = field(default=None, compare=False, repr=False)


@dataclass(frozen=True)
class Call:
    proc: str
    arg: Expr
    out: str
    span: Span | None = field(default=None, compare=False, repr=False)


Stmt = Union[Skip, Assign, If, While, Seq, Letvar, Call]


@dataclass(frozen=True)
class ProcDecl:
    tag: str
    in_param: str | None
    out_param: str | None
    body: Stmt
    span: Span | None = field(default=None, compare=False, repr=False)


LOW, HIGH = "low", "high"


@dataclass(frozen=True)
class Program:
    globals: tuple[tuple[str, str], ...]  # (name, label) in declaration order
    procedures: tuple[ProcDecl, ...]
    assumes: tuple[Expr, ...] = ()
    entry: str = "main"
    call_graph: tuple[tuple[str, tuple[str, ...]], ...] | None = field(default=None, compare=False, repr=False)

    @property
    def global_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.globals)

    def label(self, name: str) -> str:
        return dict(self.globals)[name]

    def labelled(self, label: str) -> tuple[str, ...]:
        return tuple(name for name, lab in self.globals if lab == label)

    def proc(self, tag: str) -> ProcDecl:
        for p in self.procedures:
            if p.tag == tag:
                return p
        raise KeyError(tag)

    @property
    def main(self) -> ProcDecl:
        return self.proc(self.entry)


# --------------------------------------------------------------------------
# expression helpers


def expr_vars(e: Expr) -> set[str]:
    if isinstance(e, Name):
        return {e.name}
    if isinstance(e, Const):
        return set()
    if isinstance(e, BinOp):
        return expr_vars(e.left) | expr_vars(e.right)
    return expr_vars(e.operand)


def expr_consts(e: Expr) -> Iterator[int]:
    if isinstance(e, Const):
        yield e.value
    elif isinstance(e, BinOp):
        yield from expr_consts(e.left)
        yield from expr_consts(e.right)
    elif isinstance(e, UnOp):
        yield from expr_consts(e.operand)


def rename_expr(e: Expr, mapping: dict[str, str]) -> Expr:
    if isinstance(e, Name):
        new = mapping.get(e.name)
        return e if new is None else Name(new, e.span)
    if isinstance(e, Const):
        return e
    if isinstance(e, BinOp):
        return BinOp(e.op, rename_expr(e.left, mapping), rename_expr(e.right, mapping), e.span)
    return UnOp(e.op, rename_expr(e.operand, mapping), e.span)


_NEGATED = {"<": ">=", "<=": ">", ">": "<=", ">=": "<", "=": "!=", "!=": "="}


def negate(e: Expr) -> Expr:
    """Logical negation, pushed into comparisons where the result stays 0/1-valued."""
    if isinstance(e, UnOp) and e.op == "!" and _is_boolean(e.operand):
        return e.operand
    if isinstance(e, BinOp) and e.op in _NEGATED:
        return BinOp(_NEGATED[e.op], e.left, e.right, e.span)
    return UnOp("!", e, getattr(e, "span", None))


def _is_boolean(e: Expr) -> bool:
    return (isinstance(e, BinOp) and e.op in COMPARE_OPS + LOGIC_OPS) or (
        isinstance(e, UnOp) and e.op == "!"
    )


def apply_op(op: str, a: int, b: int, mask: int) -> int:
    """One binary operation over the shared N-bit domain (``mask`` = 2^N - 1)."""
    if op == "+":
        return (a + b) & mask
    if op == "-":
        return (a - b) & mask
    if op == "*":
        return (a * b) & mask
    if op == "<":
        return int(a < b)
    if op == "<=":
        return int(a <= b)
    if op == ">":
        return int(a > b)
    if op == ">=":
        return int(a >= b)
    if op == "=":
        return int(a == b)
    if op == "!=":
        return int(a != b)
    if op == "&&":
        return int(bool(a) and bool(b))
    if op == "||":
        return int(bool(a) or bool(b))
    raise ValueError(f"unknown operator {op!r}")


def pinned_constants(assumes: Iterable[Expr], mask: int | None = None) -> dict[str, int]:
    """Variables fixed by a top-level ``x = c`` assumption (first one wins)."""
    pins: dict[str, int] = {}
    for a in assumes:
        if isinstance(a, BinOp) and a.op == "=":
            pair = (a.left, a.right) if isinstance(a.left, Name) else (a.right, a.left)
            if isinstance(pair[0], Name) and isinstance(pair[1], Const):
                value = pair[1].value if mask is None else pair[1].value & mask
                pins.setdefault(pair[0].name, value)
    return pins


def eval_pure(e: Expr, env: dict[str, int], mask: int) -> int:
    """Evaluate ``e`` over a name->value environment."""
    if isinstance(e, Const):
        return e.value & mask
    if isinstance(e, Name):
        return env[e.name]
    if isinstance(e, BinOp):
        return apply_op(e.op, eval_pure(e.left, env, mask), eval_pure(e.right, env, mask), mask)
    return int(not eval_pure(e.operand, env, mask))


# --------------------------------------------------------------------------
# parser


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    # token plumbing

    def peek(self, offset: int = 0) -> Token | None:
        i = self.pos + offset
        return self.tokens[i] if i < len(self.tokens) else None

    def at(self, *kinds: str) -> bool:
        tok = self.peek()
        return tok is not None and tok.kind in kinds

    def error(self, message: str, expected: Iterable[str] = ()) -> ParseError:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else None
            line, col = (last.line, last.col + len(last.text)) if last else (1, 1)
            return ParseError(f"{message}, found end of input", line, col, frozenset(expected))
        return ParseError(f"{message}, found {tok.text!r}", tok.line, tok.col, frozenset(expected))

    def expect(self, kind: str) -> Token:
        tok = self.peek()
        if tok is None or tok.kind != kind:
            raise self.error("unexpected token", {kind})
        self.pos += 1
        return tok

    def accept(self, kind: str) -> Token | None:
        if self.at(kind):
            tok = self.tokens[self.pos]
            self.pos += 1
            return tok
        return None

    @staticmethod
    def span(tok: Token) -> Span:
        return Span(tok.line, tok.col)

    # declarations

    def program(self) -> Program:
        globals_: list[tuple[str, str]] = []
        procs: list[ProcDecl] = []
        assumes: list[Expr] = []
        while self.peek() is not None:
            if self.at("KW_LOW", "KW_HIGH"):
                label = LOW if self.tokens[self.pos].kind == "KW_LOW" else HIGH
                self.pos += 1
                globals_.append((self.expect("IDENT").text, label))
                while self.accept("COMMA"):
                    globals_.append((self.expect("IDENT").text, label))
                self.expect("SEMI")
            elif self.accept("KW_ASSUME"):
                assumes.append(self.expr())
                self.expect("SEMI")
            elif self.at("KW_PROC"):
                procs.append(self.proc())
            else:
                raise self.error("expected a declaration", {"KW_LOW", "KW_HIGH", "KW_ASSUME", "KW_PROC"})
        return Program(tuple(globals_), tuple(procs), tuple(assumes))

    def proc(self) -> ProcDecl:
        start = self.expect("KW_PROC")
        tag = self.expect("IDENT").text
        self.expect("LPAREN")
        in_param = out_param = None
        if self.accept("KW_IN"):
            in_param = self.expect("IDENT").text
            self.expect("COMMA")
            self.expect("KW_OUT")
            out_param = self.expect("IDENT").text
        self.expect("RPAREN")
        body = self.block()
        return ProcDecl(tag, in_param, out_param, body, self.span(start))

    # statements

    def block(self) -> Stmt:
        start = self.expect("LBRACE")
        stmts: list[Stmt] = []
        while not self.at("RBRACE"):
            if self.peek() is None:
                raise self.error("unterminated block", {"RBRACE"})
            if self.accept("SEMI"):
                continue
            stmts.append(self.stmt())
        self.expect("RBRACE")
        if not stmts:
            return Skip(self.span(start))
        if len(stmts) == 1:
            return stmts[0]
        return Seq(tuple(stmts), self.span(start))

    def body(self) -> Stmt:
        if self.at("LBRACE"):
            return self.block()
        return self.stmt()

    def stmt(self) -> Stmt:
        tok = self.peek()
        if tok is None:
            raise self.error("expected a statement")
        sp = self.span(tok)
        if tok.kind == "LBRACE":
            return self.block()
        if tok.kind == "KW_SKIP":
            self.pos += 1
            self.expect("SEMI")
            return Skip(sp)
        if tok.kind == "KW_IF":
            self.pos += 1
            self.expect("LPAREN")
            cond = self.expr()
            self.expect("RPAREN")
            then = self.body()
            orelse: Stmt = Skip(sp)
            if self.accept("KW_ELSE"):
                orelse = self.body()
            return If(cond, then, orelse, sp)
        if tok.kind == "KW_WHILE":
            self.pos += 1
            self.expect("LPAREN")
            cond = self.expr()
            self.expect("RPAREN")
            return While(cond, self.body(), sp)
        if tok.kind == "KW_LETVAR":
            self.pos += 1
            name = self.expect("IDENT").text
            self.expect("ASSIGN")
            init = self.expr()
            self.expect("KW_IN")
            return Letvar(name, init, self.body(), sp)
        if tok.kind == "IDENT":
            self.pos += 1
            if self.accept("ASSIGN"):
                e = self.expr()
                self.expect("SEMI")
                return Assign(tok.text, e, sp)
            if self.accept("INCR"):
                self.expect("SEMI")
                return Assign(tok.text, BinOp("+", Name(tok.text, sp), Const(1, sp), sp), sp)
            if self.accept("DECR"):
                self.expect("SEMI")
                return Assign(tok.text, BinOp("-", Name(tok.text, sp), Const(1, sp), sp), sp)
            if self.accept("LPAREN"):
                arg = self.expr()
                self.expect("COMMA")
                out = self.expect("IDENT").text
                self.expect("RPAREN")
                self.expect("SEMI")
                return Call(tok.text, arg, out, sp)
            raise self.error("expected ':=', '++', '--' or a call", {"ASSIGN", "INCR", "DECR", "LPAREN"})
        raise self.error(
            "expected a statement",
            {"KW_SKIP", "KW_IF", "KW_WHILE", "KW_LETVAR", "IDENT", "LBRACE"},
        )

    # expressions, lowest precedence first

    _LEVELS = (
        {"OR": "||"},
        {"AND": "&&"},
        {"EQ": "=", "NE": "!="},
        {"LT": "<", "LE": "<=", "GT": ">", "GE": ">="},
        {"PLUS": "+", "MINUS": "-"},
        {"STAR": "*"},
    )

    def expr(self, level: int = 0) -> Expr:
        if level == len(self._LEVELS):
            return self.unary()
        ops = self._LEVELS[level]
        left = self.expr(level + 1)
        while self.at(*ops):
            tok = self.tokens[self.pos]
            self.pos += 1
            right = self.expr(level + 1)
            left = BinOp(ops[tok.kind], left, right, self.span(tok))
        return left

    def unary(self) -> Expr:
        tok = self.accept("NOT")
        if tok is not None:
            return UnOp("!", self.unary(), self.span(tok))
        return self.primary()

    def primary(self) -> Expr:
        tok = self.peek()
        if tok is None:
            raise self.error("expected an expression")
        sp = self.span(tok)
        if tok.kind == "NUM":
            self.pos += 1
            return Const(int(tok.text), sp)
        if tok.kind == "KW_TRUE":
            self.pos += 1
            return Const(1, sp)
        if tok.kind == "KW_FALSE":
            self.pos += 1
            return Const(0, sp)
        if tok.kind == "IDENT":
            self.pos += 1
            return Name(tok.text, sp)
        if tok.kind == "LPAREN":
            self.pos += 1
            e = self.expr()
            self.expect("RPAREN")
            return e
        raise self.error("expected an expression", {"NUM", "IDENT", "LPAREN", "NOT", "KW_TRUE", "KW_FALSE"})


def parse(tokens: list[Token] | str) -> Program:
    """Parse a token list (or raw source) into an unvalidated :class:`Program`."""
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    return _Parser(tokens).program()


def parse_expr(source: str) -> Expr:
    p = _Parser(tokenize(source))
    e = p.expr()
    if p.peek() is not None:
        raise p.error("trailing input after expression")
    return e


# --------------------------------------------------------------------------
# pretty printer

_PREC = {"||": 1, "&&": 2, "=": 3, "!=": 3, "<": 4, "<=": 4, ">": 4, ">=": 4, "+": 5, "-": 5, "*": 6}


def pretty_expr(e: Expr, parent: int = 0) -> str:
    if isinstance(e, Const):
        return str(e.value)
    if isinstance(e, Name):
        return e.name
    if isinstance(e, UnOp):
        return "!" + pretty_expr(e.operand, 7)
    prec = _PREC[e.op]
    # all binary operators parse left-associatively
    text = f"{pretty_expr(e.left, prec)} {e.op} {pretty_expr(e.right, prec + 1)}"
    return f"({text})" if prec < parent else text


def pretty_stmt(s: Stmt, indent: int = 1) -> str:
    pad = "    " * indent
    if isinstance(s, Skip):
        return f"{pad}skip;\n"
    if isinstance(s, Assign):
        return f"{pad}{s.target} := {pretty_expr(s.expr)};\n"
    if isinstance(s, Call):
        return f"{pad}{s.proc}({pretty_expr(s.arg)}, {s.out});\n"
    if isinstance(s, Seq):
        # a Seq nested directly in a Seq keeps its own braces
        return "".join(
            _braced(part, indent) if isinstance(part, Seq) else pretty_stmt(part, indent) for part in s.stmts
        )
    if isinstance(s, If):
        return (
            f"{pad}if ({pretty_expr(s.cond)}) {{\n{pretty_stmt(s.then, indent + 1)}"
            f"{pad}}} else {{\n{pretty_stmt(s.orelse, indent + 1)}{pad}}}\n"
        )
    if isinstance(s, While):
        return f"{pad}while ({pretty_expr(s.cond)}) {{\n{pretty_stmt(s.body, indent + 1)}{pad}}}\n"
    if isinstance(s, Letvar):
        return f"{pad}letvar {s.name} := {pretty_expr(s.init)} in {{\n{pretty_stmt(s.body, indent + 1)}{pad}}}\n"
    raise TypeError(s)


def _braced(s: Stmt, indent: int) -> str:
    pad = "    " * indent
    return f"{pad}{{\n{pretty_stmt(s, indent + 1)}{pad}}}\n"


def pretty(program: Program) -> str:
    out: list[str] = []
    for label in (LOW, HIGH):
        names = program.labelled(label)
        if names:
            out.append(f"{label} {', '.join(names)};\n")
    for a in program.assumes:
        out.append(f"assume {pretty_expr(a)};\n")
    for p in program.procedures:
        params = f"in {p.in_param}, out {p.out_param}" if p.in_param is not None else ""
        out.append(f"\nproc {p.tag}({params}) {{\n{pretty_stmt(p.body)}}}\n")
    return "".join(out)


# --------------------------------------------------------------------------
# validation and alpha-renaming


def _fresh(base: str, taken: set[str]) -> str:
    root = base.split("#", 1)[0]
    k = 1
    while f"{root}#{k}" in taken:
        k += 1
    return f"{root}#{k}"


class _Scoper:
    """Alpha-renames one procedure body and collects its call sites."""

    def __init__(self, program: Program, proc: ProcDecl, globals_: set[str], procs: dict[str, ProcDecl]):
        self.program = program
        self.proc = proc
        self.globals = globals_
        self.procs = procs
        self.taken: set[str] = set(globals_)
        self.calls: list[tuple[str, Span | None]] = []

    def bind(self, name: str) -> str:
        new = name if name not in self.taken else _fresh(name, self.taken)
        self.taken.add(new)
        return new

    def expr(self, e: Expr, scope: dict[str, str]) -> Expr:
        for v in expr_vars(e):
            if v not in scope:
                raise ValidationError("UndeclaredVariable", f"{v!r} is not in scope in {self.proc.tag}", e.span)
        return rename_expr(e, scope)

    def stmt(self, s: Stmt, scope: dict[str, str]) -> Stmt:
        if isinstance(s, Skip):
            return s
        if isinstance(s, Assign):
            if s.target not in scope:
                raise ValidationError(
                    "UndeclaredVariable", f"{s.target!r} is not in scope in {self.proc.tag}", s.span
                )
            return Assign(scope[s.target], self.expr(s.expr, scope), s.span)
        if isinstance(s, Seq):
            return Seq(tuple(self.stmt(x, scope) for x in s.stmts), s.span)
        if isinstance(s, If):
            return If(self.expr(s.cond, scope), self.stmt(s.then, scope), self.stmt(s.orelse, scope), s.span)
        if isinstance(s, While):
            return While(self.expr(s.cond, scope), self.stmt(s.body, scope), s.span)
        if isinstance(s, Letvar):
            init = self.expr(s.init, scope)
            new = self.bind(s.name)
            return Letvar(new, init, self.stmt(s.body, {**scope, s.name: new}), s.span)
        if isinstance(s, Call):
            callee = self.procs.get(s.proc)
            if callee is None:
                raise ValidationError("UnknownProcedure", f"no procedure named {s.proc!r}", s.span)
            if callee.in_param is None and s.proc != self.program.entry:
                raise ValidationError("ArityMismatch", f"{s.proc!r} takes no parameters", s.span)
            arg = self.expr(s.arg, scope)
            out = scope.get(s.out)
            # out-arguments must alias a global: a global name, or our own out parameter
            if out is None:
                raise ValidationError("UndeclaredVariable", f"{s.out!r} is not in scope in {self.proc.tag}", s.span)
            if out not in self.globals and out != self._out_name:
                raise ValidationError(
                    "OutParamNotGlobal",
                    f"out-argument {s.out!r} of call to {s.proc!r} must name a global variable",
                    s.span,
                )
            self.calls.append((s.proc, s.span))
            return Call(s.proc, arg, out, s.span)
        raise TypeError(s)

    def run(self) -> ProcDecl:
        p = self.proc
        scope = {g: g for g in self.globals}
        in_param = out_param = None
        self._out_name = None
        if p.in_param is not None:
            if p.in_param == p.out_param:
                raise ValidationError("DuplicateParameter", f"{p.tag}: in and out parameters share a name", p.span)
            in_param = self.bind(p.in_param)
            out_param = self.bind(p.out_param)
            self._out_name = out_param
            scope[p.in_param] = in_param
            scope[p.out_param] = out_param
        body = self.stmt(p.body, scope)
        return ProcDecl(p.tag, in_param, out_param, body, p.span)


def validate(program: Program) -> Program:
    """Check the structural rules and return an alpha-renamed program.

    Every binder (parameter or ``letvar``) in a procedure gets a name that is
    unique within that procedure and distinct from all globals; shadowing
    binders become ``x#1``, ``x#2``, ...  The result also carries the call graph.
    """
    seen: set[str] = set()
    for name, _ in program.globals:
        if name in seen:
            raise ValidationError("DuplicateDeclaration", f"global {name!r} declared twice")
        seen.add(name)
    globals_ = set(program.global_names)

    procs: dict[str, ProcDecl] = {}
    for p in program.procedures:
        if p.tag in procs:
            raise ValidationError("DuplicateProcedure", f"procedure {p.tag!r} defined twice", p.span)
        if p.tag in globals_:
            raise ValidationError("DuplicateDeclaration", f"{p.tag!r} is both a global and a procedure", p.span)
        procs[p.tag] = p
    if program.entry not in procs:
        raise ValidationError("MissingMain", f"no procedure named {program.entry!r}")
    if procs[program.entry].in_param is not None:
        raise ValidationError("ArityMismatch", f"{program.entry!r} must not take parameters", procs[program.entry].span)

    for a in program.assumes:
        for v in expr_vars(a):
            if v not in globals_:
                raise ValidationError("UndeclaredVariable", f"assumption mentions unknown global {v!r}", a.span)

    new_procs = []
    graph: dict[str, tuple[str, ...]] = {}
    call_sites: dict[str, list[tuple[str, Span | None]]] = {}
    for p in program.procedures:
        scoper = _Scoper(program, p, globals_, procs)
        new_procs.append(scoper.run())
        call_sites[p.tag] = scoper.calls
        graph[p.tag] = tuple(dict.fromkeys(c for c, _ in scoper.calls))

    # main must not be reachable from itself
    stack = list(graph[program.entry])
    reach: set[str] = set()
    while stack:
        t = stack.pop()
        if t in reach:
            continue
        reach.add(t)
        stack.extend(graph[t])
    if program.entry in reach:
        site = next(
            (sp for tag in [program.entry, *sorted(reach)] for c, sp in call_sites[tag] if c == program.entry),
            None,
        )
        raise ValidationError("MainRecursive", f"{program.entry!r} is reachable from itself", site)
    for tag, sites in call_sites.items():
        for c, sp in sites:
            if c == program.entry:
                raise ValidationError("ArityMismatch", f"{program.entry!r} cannot be called", sp)

    return replace(program, procedures=tuple(new_procs), call_graph=tuple(graph.items()))


def load(source: str) -> Program:
    """Tokenize, parse and validate in one go."""
    return validate(parse(tokenize(source)))


def max_constant(program: Program) -> int:
    """Largest literal in the program (0 if none)."""
    best = 0

    def walk(s: Stmt) -> None:
        nonlocal best
        exprs: list[Expr] = []
        if isinstance(s, Assign):
            exprs = [s.expr]
        elif isinstance(s, If):
            exprs = [s.cond]
            walk(s.then)
            walk(s.orelse)
        elif isinstance(s, While):
            exprs = [s.cond]
            walk(s.body)
        elif isinstance(s, Seq):
            for x in s.stmts:
                walk(x)
        elif isinstance(s, Letvar):
            exprs = [s.init]
            walk(s.body)
        elif isinstance(s, Call):
            exprs = [s.arg]
        for e in exprs:
            best = max([best, *expr_consts(e)])

    for p in program.procedures:
        walk(p.body)
    for a in program.assumes:
        best = max([best, *expr_consts(a)])
    return best
