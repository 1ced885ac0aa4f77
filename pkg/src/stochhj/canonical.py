"""Type-one generating functions S(t, q1, q2) and reduction to equilibrium.

``S`` is written in the generating variable space: ``a1..an`` stand for q1,
``b1..bn`` for q2. It defines ``psi_t`` implicitly by ``p = dS/dq1`` and
``P = -dS/dq2``, mapping ``(q, p)`` to ``(Q, P) = (q2, P)``.
"""

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .dsl import GENERATING, ScalarField
from .errors import DimensionError, StepDivergence, TransformError
from .geometry import HamiltonianSystem, PhaseState, poisson_bracket
from .integrator import SchemeConfig, integrate_flow
from .noise import NoisePath


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-12
    max_iter: int = 50
    twist_eps: float = 1e-10


@dataclass(frozen=True)
class GeneratingFunction:
    S: ScalarField

    def __post_init__(self):
        if self.S.space != GENERATING:
            raise ValueError("generating functions are written in a1..an, b1..bn, t")

    @property
    def n(self) -> int:
        return self.S.n

    def partials(self, t, q1, q2):
        """Return ``(S_t, S_q1, S_q2, S_q1q2, S_q1t, S_q1q1)`` at batched arguments."""
        q1 = np.asarray(q1, dtype=float)
        q2 = np.asarray(q2, dtype=float)
        e = self.S.evaluate(t, np.concatenate(np.broadcast_arrays(q1, q2), axis=-1), order=2)
        n = self.n
        H = e.hess
        return e.dt, e.grad[..., :n], e.grad[..., n:], H[..., :n, n:2 * n], H[..., :n, 2 * n], H[..., :n, :n]

    def twist(self, t, q1, q2) -> np.ndarray:
        return np.linalg.det(self.partials(t, q1, q2)[3])


def _split(z):
    z = z.as_array() if isinstance(z, PhaseState) else np.asarray(z, dtype=float)
    n = z.shape[-1] // 2
    return z[..., :n], z[..., n:]


def j_inverse(gf: GeneratingFunction, t, q1, q2) -> PhaseState:
    """``J_t^{-1}(q1, q2) = d_{q1} S = (q1, dS/dq1)``."""
    q1 = np.atleast_1d(np.asarray(q1, dtype=float))
    _, s1, _, _, _, _ = gf.partials(t, q1, q2)
    return PhaseState(q1, s1)


def _solve_for(fn, x0, cfg: NewtonConfig, what: str):
    """Newton on ``fn(x) -> (residual, jacobian)`` for batched unknowns."""
    x = np.array(x0, dtype=float)
    for _ in range(cfg.max_iter):
        res, jac = fn(x)
        det = np.linalg.det(jac)
        if np.any(~np.isfinite(det)) or np.any(np.abs(det) <= cfg.twist_eps):
            raise TransformError(f"twist condition fails while solving for {what}")
        step = np.linalg.solve(jac, res[..., None])[..., 0]
        x = x - step
        if np.max(np.abs(step)) <= cfg.tol * max(1.0, float(np.max(np.abs(x)))):
            return x
    raise TransformError(f"Newton solve for {what} did not converge")


def apply_psi(gf: GeneratingFunction, t, z, cfg: NewtonConfig = NewtonConfig(), seed=None) -> PhaseState | np.ndarray:
    """Map ``(q, p)`` to ``(q2, -dS/dq2)`` where ``q2`` solves ``p = dS/dq1(t, q, q2)``.

    Accepts a PhaseState (returns one) or a batched array ``(..., 2n)``.
    """
    single = isinstance(z, PhaseState)
    q, p = _split(z)

    def fn(q2):
        _, s1, _, s12, _, _ = gf.partials(t, q, q2)
        return s1 - p, s12

    q2 = _solve_for(fn, q if seed is None else seed, cfg, "q2")
    _, _, s2, _, _, _ = gf.partials(t, q, q2)
    out = np.concatenate([q2, -s2], axis=-1)
    return PhaseState.from_array(out) if single else out


def apply_psi_inverse(gf: GeneratingFunction, t, Z, cfg: NewtonConfig = NewtonConfig(), seed=None):
    """Invert ``apply_psi``: solve ``P = -dS/dq2(t, q1, Q)`` for q1, then ``p = dS/dq1``."""
    single = isinstance(Z, PhaseState)
    Q, P = _split(Z)

    def fn(q1):
        _, _, s2, s12, _, _ = gf.partials(t, q1, Q)
        return -s2 - P, -np.swapaxes(s12, -1, -2)

    q1 = _solve_for(fn, Q if seed is None else seed, cfg, "q1")
    _, s1, _, _, _, _ = gf.partials(t, q1, Q)
    out = np.concatenate([q1, s1], axis=-1)
    return PhaseState.from_array(out) if single else out


class TransformedHamiltonian:
    """``K_j(t, q1, q2) = h_j(q1, dS/dq1) (+ dS/dt for j = 0)`` with first derivatives by the chain rule."""

    def __init__(self, gf: GeneratingFunction, h: ScalarField, with_time_derivative: bool):
        self.gf = gf
        self.h = h
        self.with_dt = with_time_derivative

    def evaluate(self, t, q1, q2):
        """Return ``(K, dK/dq2, dK/dt)`` at batched arguments."""
        St, s1, _, s12, s1t, _ = self.gf.partials(t, q1, q2)
        z = np.concatenate(np.broadcast_arrays(np.asarray(q1, float), s1), axis=-1)
        e = self.h.evaluate(t, z, order=2)
        n = self.gf.n
        hp = e.grad[..., n:]
        value = e.value
        d_q2 = np.einsum("...i,...ij->...j", hp, s12)
        d_t = e.dt + np.sum(hp * s1t, axis=-1)
        if self.with_dt:
            Stt, St_q2 = self._time_terms(t, q1, q2)
            value = value + St
            d_q2 = d_q2 + St_q2
            d_t = d_t + Stt
        return value, d_q2, d_t

    def _time_terms(self, t, q1, q2):
        q1 = np.asarray(q1, float)
        q2 = np.asarray(q2, float)
        e = self.gf.S.evaluate(t, np.concatenate(np.broadcast_arrays(q1, q2), axis=-1), order=2)
        n = self.gf.n
        return e.hess[..., 2 * n, 2 * n], e.hess[..., 2 * n, n:2 * n]


@dataclass
class TransformedSystem:
    K: list[TransformedHamiltonian]
    defects: np.ndarray
    probe_box: tuple[float, float]
    meta: dict = dc_field(default_factory=dict)

    @property
    def max_defect(self) -> float:
        return float(np.max(self.defects)) if self.defects.size else 0.0

    def independent(self, tol: float = 1e-8) -> bool:
        return self.max_defect <= tol


def _probe_grid(n: int, box, points: int) -> np.ndarray:
    axis = np.linspace(box[0], box[1], points)
    mesh = np.meshgrid(*([axis] * n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def transform_hamiltonians(gf: GeneratingFunction, system: HamiltonianSystem, box=(-1.0, 1.0),
                           points: int = 11, times=(0.5, 1.0), q2_samples: int = 5) -> TransformedSystem:
    """Build ``K_0..K_r`` and measure how much each varies with q1.

    The defect of channel j is the largest spread (max - min over a q1 probe
    grid) of ``K_j`` at fixed ``(t, q2)`` sample points.
    """
    if gf.n != system.n:
        raise DimensionError("generating function and system disagree on dimension")
    n = gf.n
    Ks = [TransformedHamiltonian(gf, h, j == 0) for j, h in enumerate(system.fields)]
    q1 = _probe_grid(n, box, points)
    q2s = _probe_grid(n, box, q2_samples)
    defects = np.zeros(len(Ks))
    for t in times:
        for q2 in q2s:
            q2b = np.broadcast_to(q2, q1.shape)
            for j, K in enumerate(Ks):
                val = K.evaluate(t, q1, q2b)[0]
                defects[j] = max(defects[j], float(np.max(val) - np.min(val)))
    return TransformedSystem(Ks, defects, tuple(box), {"times": list(times), "points": points})


@dataclass
class EquilibriumReport:
    times: np.ndarray
    mapped: np.ndarray        # psi_{t_k}(Gamma_k), (K+1, 2n)
    transformed: np.ndarray   # solution of the reduced equations, (K+1, 2n)
    discrepancy: float
    q_drift: float
    defects: np.ndarray

    def to_csv(self, path) -> None:
        n = self.mapped.shape[1] // 2
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k"] + [f"Q{i+1}" for i in range(n)] + [f"P{i+1}" for i in range(n)]
                       + [f"Qhat{i+1}" for i in range(n)] + [f"Phat{i+1}" for i in range(n)])
            for k, t in enumerate(self.times):
                w.writerow([k, repr(float(t))] + [repr(float(v)) for v in self.mapped[k]]
                           + [repr(float(v)) for v in self.transformed[k]])


def equilibrium_check(gf: GeneratingFunction, system: HamiltonianSystem, z0, path: NoisePath,
                      cfg: SchemeConfig = SchemeConfig(), newton: NewtonConfig = NewtonConfig(),
                      transformed: TransformedSystem | None = None, defect_tol: float = 1e-8) -> EquilibriumReport:
    """Compare ``psi_t(Gamma_t)`` with the reduced dynamics ``dQ = 0``, ``dP = -sum_j dK_j/dQ dX^j``."""
    if transformed is None:
        transformed = transform_hamiltonians(gf, system)
    if not transformed.independent(defect_tol):
        raise TransformError(f"K_j depend on q1 (max defect {transformed.max_defect:.3g})")
    try:
        traj = integrate_flow(system, z0, path, cfg)
    except StepDivergence as exc:
        raise TransformError(f"flow integration failed: {exc}") from exc
    grid = path.grid
    n = system.n
    mapped = np.empty_like(traj.states)
    for k, t in enumerate(grid.times):
        mapped[k] = apply_psi(gf, t, traj.states[k], newton, seed=None if k == 0 else mapped[k - 1, :n])

    red = np.empty_like(mapped)
    red[0] = mapped[0]
    Q = mapped[0, :n].copy()
    P = mapped[0, n:].copy()
    for l in range(grid.steps):
        t_mid = grid.t_mid(l)
        q1 = apply_psi_inverse(gf, t_mid, np.concatenate([Q, P]), newton)[:n]
        dX = path.increments[l]
        force = np.zeros(n)
        for j, K in enumerate(transformed.K):
            if dX[j] == 0.0:
                continue
            force += K.evaluate(t_mid, q1, Q)[1] * dX[j]
        P = P - force
        red[l + 1, :n] = Q
        red[l + 1, n:] = P
    discrepancy = float(np.max(np.abs(mapped - red)))
    q_drift = float(np.max(np.abs(mapped[:, :n] - mapped[0, :n])))
    return EquilibriumReport(grid.times, mapped, red, discrepancy, q_drift, transformed.defects)


@dataclass
class BracketReport:
    involution_defect: float   # max |{h_i, h_j}|, 1 <= i, j <= r
    drift_defect: float        # max |{h_0, h_i} + dK_i/dt|
    tol: float
    independence_defect: float

    @property
    def passed(self) -> bool:
        return max(self.involution_defect, self.drift_defect) <= self.tol

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


def bracket_conditions(system: HamiltonianSystem, transformed: TransformedSystem | None, psi_base_points,
                       times=(0.5,), gf: GeneratingFunction | None = None, tol: float = 1e-6,
                       newton: NewtonConfig = NewtonConfig()) -> BracketReport:
    """Necessary conditions for a reduction: commuting noise Hamiltonians and ``{h_0,h_i} + dK_i/dt = 0``.

    The time term needs the generating function; without one only the
    brackets themselves enter.
    """
    z = np.atleast_2d(np.asarray(psi_base_points, dtype=float))
    r = system.r
    h = system.fields
    inv = 0.0
    drift = 0.0
    n = system.n
    for t in times:
        for i in range(1, r + 1):
            for j in range(i + 1, r + 1):
                inv = max(inv, float(np.max(np.abs(poisson_bracket(h[i], h[j], t, z)))))
            b0 = poisson_bracket(h[0], h[i], t, z)
            dKt = np.zeros(len(z))
            if gf is not None and transformed is not None:
                Z = np.stack([apply_psi(gf, t, zz, newton) for zz in z])
                dKt = transformed.K[i].evaluate(t, z[:, :n], Z[:, :n])[2]
            drift = max(drift, float(np.max(np.abs(b0 + dKt))))
    indep = transformed.max_defect if transformed is not None else float("nan")
    return BracketReport(inv, drift, tol, indep)
