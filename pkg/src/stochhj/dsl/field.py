from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import BindError, DimensionError, EvaluationError
from .dual import Dual2
from .parser import Call, Expr, Neg, Num, Var, parse, to_source, variables

PHASE = "phase"
GENERATING = "generating"

_PREFIXES = {PHASE: ("q", "p"), GENERATING: ("a", "b")}


def variable_index(name: str, n: int, space: str) -> int:
    """Column of ``name`` in the evaluation vector ``(x1.., y1.., t)``."""
    first, second = _PREFIXES[space]
    if name == "t":
        return 2 * n
    for offset, prefix in ((0, first), (n, second)):
        if name.startswith(prefix) and name[len(prefix):].isdigit():
            i = int(name[len(prefix):])
            if 1 <= i <= n:
                return offset + i - 1
    raise BindError(name, space)


@dataclass
class FieldEval:
    """Derivatives of a field; the last coordinate of ``jac``/``hess`` is time."""

    value: np.ndarray
    jac: np.ndarray
    hess: np.ndarray | None

    @property
    def grad(self) -> np.ndarray:
        return self.jac[..., :-1]

    @property
    def dt(self) -> np.ndarray:
        return self.jac[..., -1]

    @property
    def hessian(self) -> np.ndarray:
        return self.hess[..., :-1, :-1]

    @property
    def dt_grad(self) -> np.ndarray:
        return self.hess[..., -1, :-1]


def _build(node: Expr, n: int, space: str) -> Callable:
    """Turn an AST into a closure over the list of seed variables."""
    if isinstance(node, Num):
        value = node.value
        return lambda env: value
    if isinstance(node, Var):
        idx = variable_index(node.name, n, space)
        return lambda env: env[idx]
    if isinstance(node, Neg):
        child = _build(node.child, n, space)
        return lambda env: -child(env)
    if isinstance(node, Call):
        arg = _build(node.arg, n, space)
        fn = node.fn

        def call(env):
            x = arg(env)
            if isinstance(x, Dual2):
                return getattr(x, fn)()
            return _scalar_call(fn, x)
        return call

    left = _build(node.left, n, space)
    right = _build(node.right, n, space)
    op = node.op
    if op == "+":
        return lambda env: left(env) + right(env)
    if op == "-":
        return lambda env: left(env) - right(env)
    if op == "*":
        return lambda env: left(env) * right(env)
    if op == "/":
        def div(env):
            a, b = left(env), right(env)
            if not isinstance(a, Dual2) and not isinstance(b, Dual2):
                if b == 0.0:
                    raise EvaluationError("division by zero")
            return a / b
        return div

    def power(env):
        a, b = left(env), right(env)
        if isinstance(b, Dual2):
            if isinstance(a, Dual2):
                return (a.log() * b).exp()
            if a <= 0.0:
                raise EvaluationError("variable exponent needs a positive base")
            return (b * float(np.log(a))).exp()
        if isinstance(a, Dual2):
            return a.powc(float(b))
        return _scalar_pow(a, b)
    return power


def _scalar_call(fn: str, x: float) -> float:
    if fn == "log" and x <= 0.0:
        raise EvaluationError("log of a non-positive number")
    if fn == "sqrt" and x < 0.0:
        raise EvaluationError("sqrt of a negative number")
    return float(getattr(np, fn)(x))


def _scalar_pow(a: float, b: float) -> float:
    if a < 0.0 and not float(b).is_integer():
        raise EvaluationError(f"non-integer power {b} of a negative base")
    if a == 0.0 and b < 0.0:
        raise EvaluationError("zero raised to a negative power")
    return float(a) ** float(b)


class ScalarField:
    """A compiled expression of ``(t, x, y)`` with exact first and second derivatives.

    ``x``/``y`` are ``q``/``p`` in the phase space and ``a``/``b`` (the two
    configuration slots of a generating function) in the generating space.
    Evaluation is vectorised: ``z`` has shape ``(..., 2n)`` and ``t`` must
    broadcast against the batch shape ``z.shape[:-1]``.
    """

    def __init__(self, ast: Expr, n: int, space: str = PHASE, source: str | None = None):
        if space not in _PREFIXES:
            raise ValueError(f"unknown variable space {space!r}")
        self.ast = ast
        self.n = n
        self.space = space
        self.source = source if source is not None else to_source(ast)
        idx = {variable_index(name, n, space) for name in variables(ast)}
        self.uses_t = 2 * n in idx
        self.uses_x = any(i < n for i in idx)
        self.uses_y = any(n <= i < 2 * n for i in idx)
        self.is_zero = isinstance(ast, Num) and ast.value == 0.0
        self._fn = _build(ast, n, space)
        self._seed_cache = {}

    def __repr__(self) -> str:
        return f"ScalarField({self.source!r}, n={self.n}, space={self.space!r})"

    def _seeds(self, second: bool):
        key = bool(second)
        if key not in self._seed_cache:
            dim = 2 * self.n + 1
            eye = np.eye(dim)
            eye.setflags(write=False)
            hz = np.zeros((dim, dim)) if second else None
            self._seed_cache[key] = ([eye[i] for i in range(dim)], hz)
        return self._seed_cache[key]

    def evaluate(self, t, z, order: int = 2, check: bool = True) -> FieldEval:
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != 2 * self.n:
            raise DimensionError(f"expected {2 * self.n} coordinates, got {z.shape[-1]}")
        t = np.asarray(t, dtype=float)
        batch = np.broadcast_shapes(z.shape[:-1], t.shape)
        dim = 2 * self.n + 1
        second = order >= 2
        # seed derivatives stay unbatched and broadcast lazily inside the dual arithmetic
        rows, hz = self._seeds(second)
        env = [Dual2(z[..., i], rows[i], hz) for i in range(2 * self.n)]
        env.append(Dual2(t, rows[2 * self.n], hz))
        with np.errstate(all="ignore"):
            out = self._fn(env)
        if isinstance(out, Dual2):
            v = np.broadcast_to(out.v, batch)
            g = np.broadcast_to(out.g, batch + (dim,))
            h = np.broadcast_to(out.h, batch + (dim, dim)) if second else None
        else:
            v = np.full(batch, float(out))
            g = np.zeros(batch + (dim,))
            h = np.zeros(batch + (dim, dim)) if second else None
        if check and not (np.all(np.isfinite(v)) and np.all(np.isfinite(g))):
            raise EvaluationError(f"non-finite value or gradient of {self.source!r}")
        return FieldEval(v, g, h)

    def value(self, t, z) -> np.ndarray:
        return self.evaluate(t, z, order=1).value

    # Alias used when the field depends on configuration only (sections, potentials).
    def on_q(self, t, q, order: int = 2) -> FieldEval:
        q = np.asarray(q, dtype=float)
        return self.evaluate(t, np.concatenate([q, np.zeros_like(q)], axis=-1), order)


def compile_expr(ast: Expr, n: int, space: str = PHASE) -> ScalarField:
    return ScalarField(ast, n, space)


def field(source: str, n: int = 1, space: str = PHASE) -> ScalarField:
    """Parse and compile ``source`` in one go."""
    return ScalarField(parse(source), n, space, source=source)
