"""Arithmetic expressions in the arclength variable ``s``.

Material parameters are written in configuration files as small formulas
such as ``"1e-3*(1-0.9*s)"`` or ``"(1-s)*exp(-0.1*s^2/(1-s^2))"``. The
grammar is deliberately tiny::

    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := ("-" | "+") unary | power
    power   := atom ("^" unary)?          # right associative
    atom    := NUMBER | "s" | "pi" | FUNC "(" expr ")" | "(" expr ")"
    FUNC    := exp | sin | cos | sqrt
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

FUNCTIONS = {"exp": math.exp, "sin": math.sin, "cos": math.cos, "sqrt": math.sqrt}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_]\w*)|(?P<op>[-+*/^()]))"
)


class ExprSyntaxError(ValueError):
    """Raised for malformed expressions; ``column`` is 1-based."""

    def __init__(self, message, source, column):
        self.source = source
        self.column = column
        super().__init__(f"{message} at column {column}: {source!r}")


class ExprEvalError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    pass


@dataclass(frozen=True)
class Call:
    func: str
    arg: object


@dataclass(frozen=True)
class Neg:
    arg: object


@dataclass(frozen=True)
class BinOp:
    op: str
    left: object
    right: object


def _tokenize(src):
    tokens = []
    pos = 0
    while pos < len(src):
        if src[pos:].strip() == "":
            break
        m = _TOKEN.match(src, pos)
        if m is None or m.end() == pos:
            col = pos + len(src[pos:]) - len(src[pos:].lstrip()) + 1
            raise ExprSyntaxError(f"unexpected character {src[col - 1]!r}", src, col)
        kind = m.lastgroup
        start = m.start(kind)
        tokens.append((kind, m.group(kind), start + 1))
        pos = m.end()
    tokens.append(("end", "", len(src) + 1))
    return tokens


class _Parser:
    def __init__(self, src):
        self.src = src
        self.tokens = _tokenize(src)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, message, tok=None):
        tok = tok or self.peek()
        raise ExprSyntaxError(message, self.src, tok[2])

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            self.fail(f"unexpected {self.peek()[1]!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self):
        tok = self.peek()
        if tok[0] == "op" and tok[1] == "-":
            self.take()
            return Neg(self.unary())
        if tok[0] == "op" and tok[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.take()
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.take()
        kind, text, _ = tok
        if kind == "num":
            return Num(float(text))
        if kind == "name":
            if text == "s":
                return Var()
            if text == "pi":
                return Num(math.pi)
            if text in FUNCTIONS:
                if self.peek()[1] != "(":
                    self.fail(f"expected '(' after {text}")
                open_tok = self.take()
                arg = self.expr()
                if self.peek()[1] != ")":
                    self.fail("unclosed parenthesis", open_tok)
                self.take()
                return Call(text, arg)
            self.fail(f"unknown name {text!r}", tok)
        if kind == "op" and text == "(":
            node = self.expr()
            if self.peek()[1] != ")":
                self.fail("unclosed parenthesis", tok)
            self.take()
            return node
        if kind == "end":
            self.fail("unexpected end of expression", tok)
        self.fail(f"unexpected {text!r}", tok)


def to_text(node) -> str:
    """Fully parenthesized text that parses back to an equivalent tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return "s"
    if isinstance(node, Neg):
        return f"(-{to_text(node.arg)})"
    if isinstance(node, Call):
        return f"{node.func}({to_text(node.arg)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def _eval(node, s):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        return s
    if isinstance(node, Neg):
        return -_eval(node.arg, s)
    if isinstance(node, Call):
        x = _eval(node.arg, s)
        try:
            return FUNCTIONS[node.func](x)
        except (ValueError, OverflowError) as exc:
            raise ExprEvalError(f"{to_text(node)} undefined at s={s!r}: {exc}") from None
    a = _eval(node.left, s)
    b = _eval(node.right, s)
    try:
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            return a / b
        r = a**b
        if isinstance(r, complex):
            raise ValueError("complex result")
        return float(r)
    except (ZeroDivisionError, ValueError, OverflowError) as exc:
        raise ExprEvalError(f"{to_text(node)} undefined at s={s!r}: {exc}") from None


class ParamExpr:
    """A parsed parameter formula; call it with an arclength value."""

    def __init__(self, source: str):
        self.source = str(source)
        self.tree = _Parser(self.source).parse()

    def __call__(self, s: float) -> float:
        return float(_eval(self.tree, float(s)))

    def __repr__(self):
        return f"ParamExpr({self.source!r})"

    def __eq__(self, other):
        return isinstance(other, ParamExpr) and self.tree == other.tree

    def __hash__(self):
        return hash(self.tree)

    def pretty(self) -> str:
        return to_text(self.tree)

    def sample(self, s_values, endpoint_nudge=1e-12):
        """Evaluate on an array of nodes.

        A failure at ``s = 0`` or ``s = 1`` is retried at ``s -/+ nudge`` so
        removable singularities at the ends (e.g. ``(1-s)*exp(-1/(1-s^2))``)
        take their limit value.
        """
        out = []
        for s in s_values:
            try:
                out.append(self(s))
            except ExprEvalError:
                if s == 1.0:
                    out.append(self(1.0 - endpoint_nudge))
                elif s == 0.0:
                    out.append(self(endpoint_nudge))
                else:
                    raise
        return out


def parse(source: str) -> ParamExpr:
    return ParamExpr(source)


def eval_param(expr, s: float) -> float:
    if not isinstance(expr, ParamExpr):
        expr = ParamExpr(expr)
    return expr(s)
