"""Expression language with second-order forward-mode differentiation."""

from .dual import Dual2
from .field import GENERATING, PHASE, FieldEval, ScalarField, compile_expr, field
from .lexer import Token, tokenize
from .parser import Bin, Call, Neg, Num, Var, parse, to_source

__all__ = [
    "Bin", "Call", "Dual2", "FieldEval", "GENERATING", "Neg", "Num", "PHASE",
    "ScalarField", "Token", "Var", "compile_expr", "field", "parse",
    "to_source", "tokenize",
]
