import re
from dataclasses import dataclass

from ..errors import LexError

FUNCTIONS = ("sin", "cos", "exp", "log", "sqrt")

_NUMBER = re.compile(r"(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z_0-9]*")
_SINGLE = {"+": "op", "-": "op", "*": "op", "/": "op", "^": "op",
           "(": "paren", ")": "paren", ",": "comma"}


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | call | op | paren | comma | end
    lexeme: str
    offset: int


def tokenize(source: str) -> list[Token]:
    """Split an expression into tokens, skipping whitespace.

    Identifiers naming a built-in function get kind ``call``. The returned
    list is terminated by an ``end`` token whose offset is ``len(source)``.
    """
    if not source or not source.strip():
        raise LexError("empty expression", 0)
    tokens: list[Token] = []
    i = 0
    while i < len(source):
        ch = source[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _SINGLE:
            tokens.append(Token(_SINGLE[ch], ch, i))
            i += 1
            continue
        m = _NUMBER.match(source, i)
        if m:
            tokens.append(Token("number", m.group(), i))
            i = m.end()
            continue
        m = _IDENT.match(source, i)
        if m:
            name = m.group()
            tokens.append(Token("call" if name in FUNCTIONS else "ident", name, i))
            i = m.end()
            continue
        raise LexError(f"illegal character {ch!r}", i)
    tokens.append(Token("end", "", len(source)))
    return tokens
