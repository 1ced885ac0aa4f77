"""Recursive-descent parser producing a small immutable AST.

Grammar (``^`` binds tighter than unary minus and is right-associative)::

    expr  := term (('+'|'-') term)*
    term  := unary (('*'|'/') unary)*
    unary := '-' unary | power
    power := atom ('^' unary)?
    atom  := number | ident | call '(' expr ')' | '(' expr ')'
"""

from dataclasses import dataclass
from typing import Union

from ..errors import ParseError
from .lexer import Token, tokenize


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    child: "Expr"


@dataclass(frozen=True)
class Bin:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    fn: str
    arg: "Expr"


Expr = Union[Num, Var, Neg, Bin, Call]


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, lexeme: str) -> None:
        if self.tok.lexeme != lexeme or self.tok.kind == "end":
            found = "end of input" if self.tok.kind == "end" else repr(self.tok.lexeme)
            raise ParseError(f"expected {lexeme!r}, found {found}", self.tok.offset)
        self.advance()

    def expr(self) -> Expr:
        node = self.term()
        while self.tok.kind == "op" and self.tok.lexeme in "+-":
            op = self.advance().lexeme
            node = Bin(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.tok.kind == "op" and self.tok.lexeme in "*/":
            op = self.advance().lexeme
            node = Bin(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.tok.kind == "op" and self.tok.lexeme == "-":
            self.advance()
            return Neg(self.unary())
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self.tok.kind == "op" and self.tok.lexeme == "^":
            self.advance()
            return Bin("^", base, self.unary())
        return base

    def atom(self) -> Expr:
        tok = self.tok
        if tok.kind == "number":
            self.advance()
            return Num(float(tok.lexeme))
        if tok.kind == "ident":
            self.advance()
            return Var(tok.lexeme)
        if tok.kind == "call":
            self.advance()
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Call(tok.lexeme, arg)
        if tok.lexeme == "(":
            self.advance()
            node = self.expr()
            self.expect(")")
            return node
        if tok.kind == "end":
            raise ParseError("unexpected end of input", tok.offset)
        raise ParseError(f"unexpected token {tok.lexeme!r}", tok.offset)


def parse(tokens: list[Token] | str) -> Expr:
    if isinstance(tokens, str):
        tokens = tokenize(tokens)
    p = _Parser(tokens)
    node = p.expr()
    if p.tok.kind != "end":
        raise ParseError(f"unexpected token {p.tok.lexeme!r}", p.tok.offset)
    return node


def to_source(node: Expr) -> str:
    """Print an AST back to text; the output re-parses to the same tree."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        return f"(-{to_source(node.child)})"
    if isinstance(node, Bin):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    return f"{node.fn}({to_source(node.arg)})"


def variables(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables(node.child)
    if isinstance(node, Bin):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Call):
        return variables(node.arg)
    return set()
