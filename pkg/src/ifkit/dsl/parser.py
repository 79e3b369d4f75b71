"""Recursive-descent parser for the functional DSL.

Grammar (whitespace-insensitive)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | factor
    factor  := NUMBER
             | 'p(' assigns ('|' assigns)? ')'
             | 'E[' dexpr ('|' assigns)? ']'
             | 'sum_' VAR '{' expr '}'
             | FUNC '(' expr ')'
             | '(' expr ')'
             | BOUNDVAR
    assigns := VAR '=' (LEVEL | BOUNDVAR) (',' VAR '=' (LEVEL | BOUNDVAR))*
    dexpr   := data arithmetic over NUMBER, data VARs, '1(' assigns ')' and parentheses

``p(v | w)`` is shorthand for ``E[1(v) | w]``.  A bare identifier in the outer
grammar must be a bound summation variable and evaluates to its level index;
inside ``E[...]`` it names a data variable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import DSLSyntaxError, RedeclaredBoundVariable, UnboundVariable
from .nodes import (
    Add,
    Apply,
    Bound,
    BoundRef,
    CondExp,
    Const,
    DataVar,
    Div,
    Indicator,
    Mass,
    Mul,
    Sub,
    SumOver,
    assignment_refs,
)

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[-+*/()\[\]{}|=,])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | sym | eof
    text: str
    line: int
    col: int


def tokenize(text: str) -> list:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DSLSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


RESERVED = {"p", "E"}


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0
        self.scope: list = []

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def peek(self, k=1) -> Token:
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, message, tok=None, cls=DSLSyntaxError):
        tok = tok or self.tok
        return cls(message, tok.line, tok.col)

    def expect(self, text: str) -> Token:
        tok = self.tok
        if tok.text != text or tok.kind == "eof":
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise self.error(f"expected {text!r}, found {found}")
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.tok.kind in ("sym",) and self.tok.text == text:
            self.i += 1
            return True
        return False

    # outer grammar
    def parse(self):
        node = self.expr()
        if self.tok.kind != "eof":
            raise self.error(f"unexpected {self.tok.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.tok.kind == "sym" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            rhs = self.term()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.tok.kind == "sym" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            rhs = self.unary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def unary(self):
        if self.accept("-"):
            inner = self.unary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Mul(Const(-1.0), inner)
        return self.factor()

    def factor(self):
        tok = self.tok
        if tok.kind == "number":
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "sym" and tok.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind != "ident":
            found = "end of input" if tok.kind == "eof" else repr(tok.text)
            raise self.error(f"expected an expression, found {found}")
        name = tok.text
        nxt = self.peek()
        if name == "p" and nxt.text == "(":
            return self.mass()
        if name == "E" and nxt.text == "[":
            return self.condexp()
        if name.startswith("sum_") and len(name) > 4:
            return self.sumover()
        if nxt.kind == "sym" and nxt.text == "(":
            self.i += 2
            arg = self.expr()
            self.expect(")")
            return Apply(name, arg)
        if name in RESERVED:
            raise self.error(f"{name!r} must be followed by {'(' if name == 'p' else '['}")
        if name not in self.scope:
            raise self.error(f"unbound variable {name!r}", tok, UnboundVariable)
        self.i += 1
        return BoundRef(name)

    def mass(self):
        self.i += 2  # p (
        event = self.assigns()
        if self.accept("|"):
            given = self.assigns()
            self.expect(")")
            return CondExp(Indicator(event), given)
        self.expect(")")
        return Mass(event)

    def condexp(self):
        self.i += 2  # E [
        target = self.dexpr()
        given = ()
        if self.accept("|"):
            given = self.assigns()
        self.expect("]")
        return CondExp(target, given)

    def sumover(self):
        tok = self.tok
        var = tok.text[4:]
        if var in self.scope:
            raise self.error(f"bound variable {var!r} already declared by an enclosing sum", tok, RedeclaredBoundVariable)
        if var in RESERVED:
            raise self.error(f"{var!r} is reserved")
        self.i += 1
        self.expect("{")
        self.scope.append(var)
        body = self.expr()
        self.scope.pop()
        self.expect("}")
        domain = var
        for name, ref in assignment_refs(body):
            if ref == Bound(var):
                domain = name
                break
        return SumOver(var, body, domain)

    def assigns(self):
        pairs = []
        seen = set()
        while True:
            tok = self.tok
            if tok.kind != "ident":
                raise self.error("expected a variable name in assignment")
            if tok.text in seen:
                raise self.error(f"variable {tok.text!r} assigned twice")
            seen.add(tok.text)
            self.i += 1
            self.expect("=")
            val = self.tok
            if val.kind == "number" and re.fullmatch(r"\d+", val.text):
                ref = int(val.text)
            elif val.kind == "ident":
                if val.text not in self.scope:
                    raise self.error(f"unbound variable {val.text!r}", val, UnboundVariable)
                ref = Bound(val.text)
            else:
                raise self.error("expected a level index or bound variable")
            self.i += 1
            pairs.append((tok.text, ref))
            if not self.accept(","):
                break
        return tuple(sorted(pairs, key=lambda p: p[0]))

    # data expressions
    def dexpr(self):
        node = self.dterm()
        while self.tok.kind == "sym" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            rhs = self.dterm()
            node = Add(node, rhs) if op == "+" else Sub(node, rhs)
        return node

    def dterm(self):
        node = self.dunary()
        while self.tok.kind == "sym" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            rhs = self.dunary()
            node = Mul(node, rhs) if op == "*" else Div(node, rhs)
        return node

    def dunary(self):
        if self.accept("-"):
            inner = self.dunary()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Mul(Const(-1.0), inner)
        return self.dfactor()

    def dfactor(self):
        tok = self.tok
        if tok.kind == "number":
            if tok.text == "1" and self.peek().text == "(":
                self.i += 2
                event = self.assigns()
                self.expect(")")
                return Indicator(event)
            self.i += 1
            return Const(float(tok.text))
        if tok.kind == "sym" and tok.text == "(":
            self.i += 1
            node = self.dexpr()
            self.expect(")")
            return node
        if tok.kind == "ident":
            if tok.text in RESERVED or tok.text.startswith("sum_"):
                raise self.error(f"{tok.text!r} is not allowed inside E[...]")
            self.i += 1
            return DataVar(tok.text)
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        raise self.error(f"expected a data expression, found {found}")


def parse_functional(text: str):
    """Parse DSL text into a functional expression tree."""
    return _Parser(text).parse()
