"""Equation-skeleton language: AST, parser, canonical renderer, validation.

A skeleton program is a short sequence of helper bindings followed by a
return expression::

    damping = params[0] * v
    return damping + params[1] * sin(x)   # comments allowed

Leaves are input variables, previously bound names, ``params[i]``
placeholders and nonnegative numeric literals (negation is the unary
minus operator).  The operator set is closed; the parser rejects
everything else.  Values are immutable after construction and safe to
share between threads.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterator, Sequence

UNARY_OPS = ("neg", "sin", "cos", "tan", "tanh", "exp", "log", "sqrt", "abs", "sigmoid")
BINARY_OPS = ("+", "-", "*", "/", "^")
BINARY_FUNCS = ("min", "max")

MAX_PARAMS = 10
MAX_NODES = 200
MAX_LINES = 20

_RESERVED = ({"return", "params", "min", "max"} | set(UNARY_OPS)) - {"neg"}
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


class ParseError(ValueError):
    """Syntax error with position and the tokens that would have been accepted."""

    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class ValidationError(ValueError):
    """Structurally well-formed program that violates a language rule."""


@dataclass(frozen=True)
class Expr:
    """Base class for expression nodes; subclasses are structural values."""


@dataclass(frozen=True)
class Literal(Expr):
    value: float


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class Param(Expr):
    index: int


@dataclass(frozen=True)
class Unary(Expr):
    op: str
    arg: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: str  # one of BINARY_OPS or BINARY_FUNCS
    left: Expr
    right: Expr


@dataclass(frozen=True)
class SkeletonProgram:
    """A validated equation skeleton.

    ``param_count`` is always ``1 + max referenced parameter index`` (0 when
    no parameters appear); validation guarantees every smaller index is
    referenced too.
    """

    inputs: tuple[str, ...]
    param_count: int
    lines: tuple[tuple[str, Expr], ...]
    ret: Expr

    def render(self) -> str:
        return render(self)


def children(expr: Expr) -> tuple[Expr, ...]:
    if isinstance(expr, Unary):
        return (expr.arg,)
    if isinstance(expr, Binary):
        return (expr.left, expr.right)
    return ()


def with_children(expr: Expr, new: Sequence[Expr]) -> Expr:
    if isinstance(expr, Unary):
        return Unary(expr.op, new[0])
    if isinstance(expr, Binary):
        return Binary(expr.op, new[0], new[1])
    return expr


def walk(expr: Expr) -> Iterator[Expr]:
    """Yield every node of the tree, parent before children."""
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(children(node)))


def subexpressions(expr: Expr) -> list[tuple[tuple[int, ...], Expr]]:
    """All (path, node) pairs; a path is the sequence of child indices."""
    out: list[tuple[tuple[int, ...], Expr]] = []

    def visit(node: Expr, path: tuple[int, ...]) -> None:
        out.append((path, node))
        for i, child in enumerate(children(node)):
            visit(child, path + (i,))

    visit(expr, ())
    return out


def replace_at(expr: Expr, path: tuple[int, ...], new: Expr) -> Expr:
    """Return a copy of ``expr`` with the node at ``path`` replaced."""
    if not path:
        return new
    kids = list(children(expr))
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(expr, kids)


def count_nodes(expr: Expr) -> int:
    return sum(1 for _ in walk(expr))


# ---------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<number>(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[-+*/^()\[\]=,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str  # number | name | sym | newline | end
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        pos = 0
        while pos < len(line):
            if line[pos] in " \t\r":
                pos += 1
                continue
            m = _TOKEN_RE.match(line, pos)
            if m is None:
                raise ParseError(f"unexpected character {line[pos]!r}", lineno, pos + 1)
            kind = m.lastgroup or "sym"
            tokens.append(_Token(kind, m.group(), lineno, pos + 1))
            pos = m.end()
        if line.strip():
            tokens.append(_Token("newline", "", lineno, len(raw) + 1))
    tokens.append(_Token("end", "", text.count("\n") + 1, 1))
    return tokens


# ---------------------------------------------------------------------------
# Parser (recursive descent; precedence ^ > unary - > * / > + -, ^ right-assoc)


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.peek()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or tok.kind!r}", tok.line, tok.col)
        return self.advance()

    def program(self) -> tuple[list[tuple[str, Expr]], Expr]:
        lines: list[tuple[str, Expr]] = []
        while True:
            tok = self.peek()
            if tok.kind == "end":
                raise ParseError("expected 'return' statement", tok.line, tok.col)
            if tok.kind == "name" and tok.text == "return":
                self.advance()
                ret = self.expr()
                self._end_of_line()
                tail = self.peek()
                if tail.kind != "end":
                    raise ParseError("content after 'return' statement", tail.line, tail.col)
                return lines, ret
            if tok.kind != "name":
                raise ParseError(f"expected binding name or 'return', found {tok.text!r}", tok.line, tok.col)
            name = self.advance().text
            self.expect("=")
            lines.append((name, self.expr()))
            self._end_of_line()

    def _end_of_line(self) -> None:
        tok = self.peek()
        if tok.kind == "newline":
            self.advance()
        elif tok.kind != "end":
            raise ParseError(f"expected end of line, found {tok.text!r}", tok.line, tok.col)

    def expr(self) -> Expr:
        node = self.term()
        while self.peek().text in ("+", "-"):
            op = self.advance().text
            node = Binary(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek().text in ("*", "/"):
            op = self.advance().text
            node = Binary(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek().text == "-":
            self.advance()
            return Unary("neg", self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.peek().text == "^":
            self.advance()
            return Binary("^", base, self.unary())  # right-assoc, exponent may be signed
        return base

    def atom(self) -> Expr:
        tok = self.peek()
        if tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "number":
            self.advance()
            return Literal(float(tok.text))
        if tok.kind == "name":
            self.advance()
            if tok.text == "params":
                self.expect("[")
                idx = self.peek()
                if idx.kind != "number" or not idx.text.isdigit():
                    raise ParseError("expected integer parameter index", idx.line, idx.col)
                self.advance()
                self.expect("]")
                return Param(int(idx.text))
            if self.peek().text == "(":
                return self._call(tok)
            return Var(tok.text)
        raise ParseError(f"expected expression, found {tok.text or tok.kind!r}", tok.line, tok.col)

    def _call(self, name_tok: _Token) -> Expr:
        self.expect("(")
        first = self.expr()
        if name_tok.text in BINARY_FUNCS:
            self.expect(",")
            second = self.expr()
            self.expect(")")
            return Binary(name_tok.text, first, second)
        if name_tok.text in UNARY_OPS and name_tok.text != "neg":
            self.expect(")")
            return Unary(name_tok.text, first)
        raise ParseError(f"unknown function {name_tok.text!r}", name_tok.line, name_tok.col)


def parse(text: str, inputs: Sequence[str]) -> SkeletonProgram:
    """Parse skeleton source against the given input-variable names.

    Raises ParseError on malformed syntax, ValidationError when the program
    breaks a language rule (unknown identifier, parameter index >= 10,
    unreferenced parameter, node or line caps).
    """
    tokens = _tokenize(text)
    lines, ret = _Parser(tokens).program()
    return make_program(inputs, lines, ret)


def make_program(
    inputs: Sequence[str],
    lines: Sequence[tuple[str, Expr]],
    ret: Expr,
) -> SkeletonProgram:
    """Validate and assemble a program from already-built expression trees."""
    inputs = tuple(inputs)
    lines = tuple((name, expr) for name, expr in lines)

    if len(set(inputs)) != len(inputs):
        raise ValidationError("input names must be unique")
    for name in inputs:
        if name in _RESERVED or not _IDENT_RE.match(name):
            raise ValidationError(f"input name {name!r} is reserved or not an identifier")
    if len(lines) > MAX_LINES:
        raise ValidationError(f"{len(lines)} bindings exceed the limit of {MAX_LINES}")
    total_nodes = sum(count_nodes(e) for _, e in lines) + count_nodes(ret)
    if total_nodes > MAX_NODES:
        raise ValidationError(f"{total_nodes} nodes exceed the limit of {MAX_NODES}")

    known = set(inputs)
    for name, expr in lines:
        if name in _RESERVED or name in inputs:
            raise ValidationError(f"binding name {name!r} is reserved or shadows an input")
        if name in known:
            raise ValidationError(f"binding name {name!r} is defined twice")
        _check_identifiers(expr, known)
        known.add(name)
    _check_identifiers(ret, known)

    indices: set[int] = set()
    for expr in [e for _, e in lines] + [ret]:
        for node in walk(expr):
            if isinstance(node, Param):
                if node.index >= MAX_PARAMS:
                    raise ValidationError(
                        f"params[{node.index}] exceeds the maximum of {MAX_PARAMS} parameters"
                    )
                indices.add(node.index)
            elif isinstance(node, Literal):
                if not (node.value >= 0.0 and node.value < float("inf")):
                    raise ValidationError(f"literal {node.value!r} must be finite and nonnegative")
    param_count = 1 + max(indices) if indices else 0
    missing = sorted(set(range(param_count)) - indices)
    if missing:
        raise ValidationError(f"params[{missing[0]}] is never referenced")

    return SkeletonProgram(inputs, param_count, lines, ret)


def _check_identifiers(expr: Expr, known: set[str]) -> None:
    for node in walk(expr):
        if isinstance(node, Var) and node.name not in known:
            raise ValidationError(f"unknown identifier {node.name!r}")


# ---------------------------------------------------------------------------
# Canonical rendering

def _fmt_literal(value: float) -> str:
    if value == int(value) and abs(value) < 1e16:
        return str(int(value))
    return repr(value)


def render_expr(expr: Expr) -> str:
    if isinstance(expr, Literal):
        return _fmt_literal(expr.value)
    if isinstance(expr, Var):
        return expr.name
    if isinstance(expr, Param):
        return f"params[{expr.index}]"
    if isinstance(expr, Unary):
        if expr.op == "neg":
            return f"(-{render_expr(expr.arg)})"
        return f"{expr.op}({render_expr(expr.arg)})"
    if isinstance(expr, Binary):
        if expr.op in BINARY_FUNCS:
            return f"{expr.op}({render_expr(expr.left)}, {render_expr(expr.right)})"
        return f"({render_expr(expr.left)} {expr.op} {render_expr(expr.right)})"
    raise TypeError(f"not an expression node: {expr!r}")


def render(program: SkeletonProgram) -> str:
    """Canonical text; ``parse(render(p), p.inputs)`` is structurally ``p``.

    The character count of this text is the program length used by the
    experience buffer's length-biased sampling.
    """
    out = [f"{name} = {render_expr(expr)}" for name, expr in program.lines]
    out.append(f"return {render_expr(program.ret)}")
    return "\n".join(out)


def complexity(program: SkeletonProgram) -> tuple[int, int]:
    """(node_count, char_length) over all bindings plus the return expression."""
    nodes = sum(count_nodes(e) for _, e in program.lines) + count_nodes(program.ret)
    return nodes, len(render(program))
