"""Monte-Carlo heat-equation construction ``Phi_t(x) = exp(-E[S~_t(x)])`` and its references.

The system is ``h_0 = |p|^2/2 + V(q)``, ``h_i = p_i`` with one Brownian
channel per coordinate. ``Phi`` then solves ``dPhi/dt = V Phi + Laplace(Phi)/2``
with ``Phi_0 = exp(-f)``. The mean is taken before exponentiating.

Paths are processed in fixed-size blocks (optionally on a thread pool); each
block is an independent batch, and the batched integrator freezes converged
members, so results do not depend on the thread count. Reductions use
``math.fsum`` in path order.
"""

import csv
import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, solve_banded

from .dsl import PHASE, Bin, Num, ScalarField, Var, compile_expr
from .errors import DimensionError, PdeError, ReliabilityWarning
from .geometry import HamiltonianSystem
from .lagrangian_hj import LagrangianSection, ShootingConfig, shoot_many
from .noise import TimeGrid, sample_path

PATH_BLOCK = 512
TRUNCATION_WARN = 0.10


def fk_system(V: ScalarField) -> HamiltonianSystem:
    """``h_0 = sum p_i^2/2 + V``, ``h_i = p_i``."""
    n = V.n
    if V.uses_y:
        raise ValueError("the potential must not depend on momenta")
    kinetic = Bin("*", Num(0.5), Bin("^", Var(f"p{1}"), Num(2.0)))
    for i in range(2, n + 1):
        kinetic = Bin("+", kinetic, Bin("*", Num(0.5), Bin("^", Var(f"p{i}"), Num(2.0))))
    h0 = compile_expr(kinetic if V.is_zero else Bin("+", kinetic, V.ast), n, PHASE)
    noise = [compile_expr(Var(f"p{i}"), n, PHASE) for i in range(1, n + 1)]
    return HamiltonianSystem([h0] + noise, name="feynman-kac")


@dataclass(frozen=True)
class FkConfig:
    V: ScalarField
    f: ScalarField
    M: int
    grid: TimeGrid
    seed: int
    xs: tuple
    nodes: tuple | None = None     # grid nodes to report; default: the final node
    shooting: ShootingConfig = ShootingConfig()
    threads: int = 1

    def __post_init__(self):
        if self.M < 100:
            raise ValueError("FkConfig needs M >= 100 paths")
        if self.V.n != self.f.n:
            raise DimensionError("potential and section disagree on dimension")
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        if self.V.n == 1 and xs.shape[0] == 1 and xs.shape[1] != 1:
            xs = xs.T
        if xs.shape[1] != self.V.n:
            raise DimensionError(f"evaluation points must have {self.V.n} coordinates")
        object.__setattr__(self, "xs", tuple(tuple(float(v) for v in row) for row in xs))
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    @property
    def report_nodes(self) -> np.ndarray:
        return np.array([self.grid.steps] if self.nodes is None else sorted(set(self.nodes)), dtype=int)


@dataclass
class FkRow:
    x: tuple
    t: float
    mean_s: float
    stderr: float
    phi_hat: float
    m_eff: int
    truncated: int
    phi_ref: float = float("nan")
    verdict: str = ""

    @property
    def abs_err(self) -> float:
        return abs(self.phi_hat - self.phi_ref)


@dataclass
class FkReport:
    rows: list[FkRow]
    M: int
    warnings: list[str] = dc_field(default_factory=list)
    budget: float = float("nan")

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r.verdict == "PASS" for r in self.rows)

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "meanS", "stderr", "phi_hat", "phi_ref", "abs_err", "verdict"])
            for r in self.rows:
                x = r.x[0] if len(r.x) == 1 else " ".join(repr(float(v)) for v in r.x)
                w.writerow([repr(float(x)) if len(r.x) == 1 else x, repr(float(r.t)), repr(r.mean_s),
                            repr(r.stderr), repr(r.phi_hat), repr(float(r.phi_ref)), repr(float(r.abs_err)),
                            r.verdict])


def _block(args):
    system, section, xs, grid, r, seed, start, stop, nodes, cfg = args
    paths = [sample_path(grid, r, seed, m) for m in range(start, stop)]
    P = len(xs)
    all_x = np.repeat(xs, len(paths), axis=0)
    all_paths = paths * P
    sps = shoot_many(system, section, all_x, all_paths, cfg, nodes)
    # (P, block, nodes)
    return np.stack([sp.s_tilde for sp in sps]).reshape(P, len(paths), len(nodes))


def sample_s_tilde(cfg: FkConfig) -> np.ndarray:
    """``S~`` for every (x, path, node); NaN marks truncated paths. Shape ``(P, M, N)``."""
    system = fk_system(cfg.V)
    section = LagrangianSection(cfg.f)
    xs = np.asarray(cfg.xs, dtype=float)
    nodes = cfg.report_nodes
    jobs = [(system, section, xs, cfg.grid, system.r, cfg.seed, s, min(s + PATH_BLOCK, cfg.M), nodes, cfg.shooting)
            for s in range(0, cfg.M, PATH_BLOCK)]
    if cfg.threads == 1:
        parts = [_block(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            parts = list(pool.map(_block, jobs))
    return np.concatenate(parts, axis=1)


def _mean_stderr(values: np.ndarray) -> tuple[float, float]:
    m = len(values)
    mean = math.fsum(values) / m
    var = math.fsum((v - mean) ** 2 for v in values) / (m - 1) if m > 1 else float("nan")
    return mean, math.sqrt(var / m)


def fk_estimate(cfg: FkConfig) -> FkReport:
    S = sample_s_tilde(cfg)
    nodes = cfg.report_nodes
    rows, notes = [], []
    for i, x in enumerate(cfg.xs):
        for j, k in enumerate(nodes):
            vals = S[i, :, j]
            ok = np.isfinite(vals)
            trunc = int(np.count_nonzero(~ok))
            m_eff = cfg.M - trunc
            if m_eff < 2:
                notes.append(f"x={x}, t={cfg.grid.t(k)}: fewer than two untruncated paths")
                mean, se = float("nan"), float("nan")
            else:
                mean, se = _mean_stderr(vals[ok].tolist())
            if trunc > TRUNCATION_WARN * cfg.M:
                msg = f"x={x}, t={cfg.grid.t(k):g}: {trunc}/{cfg.M} paths truncated"
                notes.append(msg)
                warnings.warn(msg, ReliabilityWarning, stacklevel=2)
            rows.append(FkRow(tuple(x), float(cfg.grid.t(k)), mean, se, math.exp(-mean), m_eff, trunc))
    return FkReport(rows, cfg.M, notes)


@dataclass
class PdeSolution:
    x: np.ndarray
    t: np.ndarray
    phi: np.ndarray   # (len(t), len(x))

    def at(self, x, t) -> np.ndarray:
        k = int(np.argmin(np.abs(self.t - t)))
        if abs(self.t[k] - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a mesh time")
        return CubicSpline(self.x, self.phi[k])(np.asarray(x, dtype=float))


def default_interval(xs, t_end: float, buffer: float | None = None) -> tuple[float, float]:
    """Evaluation range widened by ``buffer`` (default ``10 sqrt(t_end) + 1``) on both sides."""
    xs = np.asarray(xs, dtype=float).ravel()
    b = 10.0 * math.sqrt(t_end) + 1.0 if buffer is None else buffer
    return float(xs.min() - b), float(xs.max() + b)


def pde_reference(V: ScalarField, f: ScalarField, interval, dx: float, grid: TimeGrid) -> PdeSolution:
    """Crank-Nicolson for ``dPhi/dt = V Phi + Phi_xx/2`` with ``Phi_0 = exp(-f)``.

    Dirichlet values are held at their initial values. Time steps follow
    ``grid``.
    """
    if V.n != 1 or f.n != 1:
        raise DimensionError("the PDE reference is one-dimensional")
    lo, hi = interval
    m = int(round((hi - lo) / dx))
    if m < 4:
        raise ValueError("the interval needs at least four cells")
    x = np.linspace(lo, hi, m + 1)
    h = x[1] - x[0]
    Vx = V.on_q(0.0, x[:, None], order=1).value
    phi0 = np.exp(-f.on_q(0.0, x[:, None], order=1).value)
    if V.uses_t:
        raise ValueError("time-dependent potentials are not supported by the reference solver")
    dt = grid.dt
    inner = slice(1, m)
    lam = 0.5 / h ** 2
    diag = -2.0 * lam + Vx[inner]
    # (I - dt/2 A) phi_new = (I + dt/2 A) phi_old, A = V + (1/2) D2
    ab = np.zeros((3, m - 1))
    ab[0, 1:] = -0.5 * dt * lam
    ab[1, :] = 1.0 - 0.5 * dt * diag
    ab[2, :-1] = -0.5 * dt * lam
    phi = np.empty((grid.steps + 1, m + 1))
    phi[0] = phi0
    cur = phi0.copy()
    for k in range(grid.steps):
        rhs = cur[inner] + 0.5 * dt * (diag * cur[inner] + lam * (cur[:-2] + cur[2:]))
        rhs[0] += 0.5 * dt * lam * phi0[0]
        rhs[-1] += 0.5 * dt * lam * phi0[-1]
        try:
            new = solve_banded((1, 1), ab, rhs, check_finite=True)
        except (LinAlgError, ValueError) as exc:
            raise PdeError(f"Crank-Nicolson solve failed at step {k}: {exc}") from exc
        if not np.all(np.isfinite(new)):
            raise PdeError(f"non-finite solution at step {k}")
        cur = np.concatenate([[phi0[0]], new, [phi0[-1]]])
        phi[k + 1] = cur
    return PdeSolution(x, grid.times, phi)


def fk_compare(report: FkReport, reference, budget: float) -> FkReport:
    """Fill ``phi_ref`` and verdicts: PASS iff ``|Phi^ - Phi_ref| <= 3 Phi^ stderr + budget Phi_ref``.

    ``reference`` is a PdeSolution or a callable ``(x, t) -> Phi``.
    """
    for row in report.rows:
        if isinstance(reference, PdeSolution):
            ref = float(reference.at(row.x[0], row.t))
        else:
            ref = float(reference(row.x, row.t))
        row.phi_ref = ref
        tol = 3.0 * row.phi_hat * row.stderr + budget * abs(ref)
        row.verdict = "PASS" if math.isfinite(row.phi_hat) and row.abs_err <= tol else "FAIL"
    report.budget = budget
    return report


# Brute-force oracle for quadratic potentials ------------------------------------

def linear_s_tilde(kappa: float, phi_f: float, x: float, dB, dt: float) -> np.ndarray:
    """``S~_K(x)`` for ``V = kappa q^2/2``, ``f = phi_f q^2/2`` on increment rows ``dB`` (shape ``(..., K)``).

    The midpoint flow of this system is affine: ``z' = C z + d dB`` with the
    Cayley factor ``C`` of ``Omega Hess(h_0) dt``, so shooting reduces to one
    scalar division.
    """
    dB = np.asarray(dB, dtype=float)
    A = np.array([[0.0, 1.0], [-kappa, 0.0]]) * dt
    L = np.eye(2) - 0.5 * A
    C = np.linalg.solve(L, np.eye(2) + 0.5 * A)
    d = np.linalg.solve(L, np.array([1.0, 0.0]))
    K = dB.shape[-1]
    batch = dB.shape[:-1]
    # homogeneous part Phi_k applied to (1, phi_f), inhomogeneous part b_k
    u = np.array([1.0, phi_f])
    b = np.zeros(batch + (2,))
    for k in range(K):
        u = C @ u
        b = b @ C.T + dB[..., k, None] * d
    a = (x - b[..., 0]) / u[0]
    z = np.stack([a, phi_f * a], axis=-1)
    R = np.zeros(batch)
    for k in range(K):
        zn = z @ C.T + dB[..., k, None] * d
        mid = 0.5 * (z + zn)
        h0 = 0.5 * mid[..., 1] ** 2 + 0.5 * kappa * mid[..., 0] ** 2
        R = R + mid[..., 1] * (zn[..., 0] - z[..., 0] - dB[..., k]) - h0 * dt
        z = zn
    return R + 0.5 * phi_f * a ** 2


def gaussian_oracle_mean(kappa: float, phi_f: float, x: float, t_end: float, K: int, order: int = 3) -> float:
    """``E[S~_t(x)]`` by tensor Gauss-Hermite quadrature over the K increments (exact: S~ is quadratic in them)."""
    if K > 8:
        raise ValueError("the brute-force oracle is limited to K <= 8")
    nodes, weights = np.polynomial.hermite_e.hermegauss(order)
    weights = weights / math.sqrt(2.0 * math.pi)
    dt = t_end / K
    pts = np.array(list(itertools.product(nodes, repeat=K))) * math.sqrt(dt)
    w = np.prod(np.array(list(itertools.product(weights, repeat=K))), axis=-1)
    return float(np.sum(w * linear_s_tilde(kappa, phi_f, x, pts, dt)))
