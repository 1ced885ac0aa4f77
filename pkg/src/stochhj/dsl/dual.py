"""Second-order forward-mode numbers over numpy arrays.

A :class:`Dual2` carries a value, a gradient and (optionally) a Hessian with
respect to ``D`` seed variables, vectorised over an arbitrary batch shape:
``v`` has the batch shape, ``g`` appends ``(D,)`` and ``h`` appends ``(D, D)``.
When ``h`` is ``None`` only first derivatives are propagated.
"""

import numpy as np

from ..errors import EvaluationError


def _outer(a, b):
    return a[..., :, None] * b[..., None, :]


class Dual2:
    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h=None):
        self.v = v
        self.g = g
        self.h = h

    @classmethod
    def variable(cls, value, index: int, dim: int, second_order: bool = True) -> "Dual2":
        value = np.asarray(value, dtype=float)
        g = np.zeros(value.shape + (dim,))
        g[..., index] = 1.0
        h = np.zeros(value.shape + (dim, dim)) if second_order else None
        return cls(value, g, h)

    # chain rule for a scalar function with derivatives d1, d2 at self.v
    def _apply(self, value, d1, d2) -> "Dual2":
        g = d1[..., None] * self.g
        h = None
        if self.h is not None:
            h = d1[..., None, None] * self.h + d2[..., None, None] * _outer(self.g, self.g)
        return Dual2(value, g, h)

    def __neg__(self):
        return Dual2(-self.v, -self.g, None if self.h is None else -self.h)

    def __add__(self, other):
        if isinstance(other, Dual2):
            h = None if self.h is None else self.h + other.h
            return Dual2(self.v + other.v, self.g + other.g, h)
        return Dual2(self.v + other, self.g, self.h)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            h = None if self.h is None else self.h - other.h
            return Dual2(self.v - other.v, self.g - other.g, h)
        return Dual2(self.v - other, self.g, self.h)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Dual2):
            a, b = self, other
            g = a.g * b.v[..., None] + b.g * a.v[..., None]
            h = None
            if a.h is not None:
                h = (a.h * b.v[..., None, None] + b.h * a.v[..., None, None]
                     + _outer(a.g, b.g) + _outer(b.g, a.g))
            return Dual2(a.v * b.v, g, h)
        h = None if self.h is None else self.h * other
        return Dual2(self.v * other, self.g * other, h)

    __rmul__ = __mul__

    def reciprocal(self) -> "Dual2":
        x = self.v
        if np.any(x == 0.0):
            raise EvaluationError("division by zero")
        inv = 1.0 / x
        return self._apply(inv, -inv * inv, 2.0 * inv * inv * inv)

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other.reciprocal()
        if other == 0.0:
            raise EvaluationError("division by zero")
        return self * (1.0 / other)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def powc(self, c: float) -> "Dual2":
        """Raise to a constant exponent."""
        x = self.v
        if c == 0.0:
            return Dual2(np.ones_like(x), np.zeros_like(self.g),
                         None if self.h is None else np.zeros_like(self.h))
        if c == 1.0:
            return self
        if c == 2.0:
            return self * self
        integral = float(c).is_integer()
        if not integral and np.any(x < 0.0):
            raise EvaluationError(f"non-integer power {c} of a negative base")
        if c < 2.0 and np.any(x == 0.0):
            raise EvaluationError(f"power {c} is not differentiable at zero")
        return self._apply(x ** c, c * x ** (c - 1.0), c * (c - 1.0) * x ** (c - 2.0))

    def sin(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self._apply(s, c, -s)

    def cos(self):
        s, c = np.sin(self.v), np.cos(self.v)
        return self._apply(c, -s, -c)

    def exp(self):
        e = np.exp(self.v)
        return self._apply(e, e, e)

    def log(self):
        x = self.v
        if np.any(x <= 0.0):
            raise EvaluationError("log of a non-positive number")
        inv = 1.0 / x
        return self._apply(np.log(x), inv, -inv * inv)

    def sqrt(self):
        x = self.v
        if np.any(x <= 0.0):
            raise EvaluationError("sqrt is not differentiable on x <= 0")
        r = np.sqrt(x)
        return self._apply(r, 0.5 / r, -0.25 / (r * x))
