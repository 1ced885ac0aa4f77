"""Phase-space primitives on T*Q = R^n x R^n in Darboux coordinates.

Conventions: a phase point is stored as ``z = (q_1..q_n, p_1..p_n)``, the
Liouville form is ``theta = sum p_i dq^i`` and ``omega = -d theta``, so the
Hamiltonian vector field of ``h`` is ``(dh/dp, -dh/dq) = OMEGA @ grad h``.
"""

from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np

from .dsl import ScalarField
from .errors import DimensionError, EvaluationError


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if q.ndim != 1 or q.shape != p.shape or q.size < 1:
            raise DimensionError(f"q and p must be vectors of equal length, got {q.shape} and {p.shape}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
            raise ValueError("phase state entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def n(self) -> int:
        return self.q.size

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])

    @classmethod
    def from_array(cls, z) -> "PhaseState":
        z = np.asarray(z, dtype=float)
        if z.ndim != 1 or z.size % 2:
            raise DimensionError("phase vector must have even length")
        n = z.size // 2
        return cls(z[:n], z[n:])


@dataclass(frozen=True)
class CotangentVector:
    dq: np.ndarray
    dp: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.dq, float), np.asarray(self.dp, float)])

    @classmethod
    def from_array(cls, v) -> "CotangentVector":
        v = np.asarray(v, dtype=float)
        n = v.shape[-1] // 2
        return cls(v[..., :n], v[..., n:])


@dataclass
class HamiltonianSystem:
    """Hamiltonians ``h_0..h_r``; ``h_0`` pairs with time, ``h_j`` with Brownian channel j."""

    fields: list[ScalarField]
    name: str = ""
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not self.fields:
            raise ValueError("a system needs at least the drift Hamiltonian h_0")
        dims = {f.n for f in self.fields}
        if len(dims) != 1:
            raise DimensionError(f"Hamiltonians disagree on dimension: {sorted(dims)}")

    @property
    def n(self) -> int:
        return self.fields[0].n

    @property
    def r(self) -> int:
        return len(self.fields) - 1


@lru_cache(maxsize=None)
def _omega(n: int) -> np.ndarray:
    om = np.zeros((2 * n, 2 * n))
    om[:n, n:] = np.eye(n)
    om[n:, :n] = -np.eye(n)
    om.setflags(write=False)
    return om


def symplectic_matrix(n: int) -> np.ndarray:
    """The standard ``[[0, I], [-I, 0]]`` block matrix."""
    return _omega(n)


def _as_z(z) -> np.ndarray:
    if isinstance(z, PhaseState):
        return z.as_array()
    return np.asarray(z, dtype=float)


def hamiltonian_vector_field(h: ScalarField, t, z) -> np.ndarray:
    """Return ``(dh/dp, -dh/dq)`` at ``z`` (batched over leading axes)."""
    z = _as_z(z)
    grad = h.evaluate(t, z, order=1).grad
    if not np.all(np.isfinite(grad)):
        raise EvaluationError("non-finite gradient")
    n = h.n
    return np.concatenate([grad[..., n:], -grad[..., :n]], axis=-1)


def poisson_bracket(f: ScalarField, g: ScalarField, t, z) -> np.ndarray:
    """``{f, g} = sum_i df/dq^i dg/dp_i - df/dp_i dg/dq^i``."""
    if f.n != g.n:
        raise DimensionError(f"fields live on different spaces (n={f.n} vs n={g.n})")
    z = _as_z(z)
    n = f.n
    df = f.evaluate(t, z, order=1).grad
    dg = g.evaluate(t, z, order=1).grad
    return np.sum(df[..., :n] * dg[..., n:] - df[..., n:] * dg[..., :n], axis=-1)


def liouville_pairing(z, v) -> np.ndarray:
    """Evaluate ``theta`` at ``z`` on the tangent vector ``v = (v_q, v_p)``."""
    z = _as_z(z)
    v = np.asarray(v, dtype=float)
    if z.shape[-1] != v.shape[-1] or z.shape[-1] % 2:
        raise DimensionError(f"cannot pair a point of size {z.shape[-1]} with a vector of size {v.shape[-1]}")
    n = z.shape[-1] // 2
    return np.sum(z[..., n:] * v[..., :n], axis=-1)


def liouville_form(z) -> np.ndarray:
    """Components of ``theta`` at ``z`` in the ``(dq, dp)`` basis: ``(p, 0)``."""
    z = _as_z(z)
    n = z.shape[-1] // 2
    out = np.zeros_like(z)
    out[..., :n] = z[..., n:]
    return out


def symplectic_defect(J) -> float:
    """Max-norm of ``J^T OMEGA J - OMEGA``; batched input returns the max over the batch."""
    J = np.asarray(J, dtype=float)
    if J.ndim < 2 or J.shape[-1] != J.shape[-2] or J.shape[-1] % 2:
        raise DimensionError(f"symplectic defect needs square matrices of even size, got {J.shape}")
    om = _omega(J.shape[-1] // 2)
    diff = np.swapaxes(J, -1, -2) @ om @ J - om
    return float(np.max(np.abs(diff))) if diff.size else 0.0


def symplectic_defects(J) -> np.ndarray:
    """Per-matrix defects for a stack of Jacobians."""
    J = np.asarray(J, dtype=float)
    om = _omega(J.shape[-1] // 2)
    diff = np.swapaxes(J, -1, -2) @ om @ J - om
    return np.max(np.abs(diff), axis=(-2, -1))
