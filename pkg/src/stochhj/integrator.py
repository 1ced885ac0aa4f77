"""Implicit Stratonovich midpoint integration of stochastic Hamilton equations.

One step solves ``z' = z + sum_j X_{h_j}(t_mid, (z + z')/2) dX^j``, which is the
midpoint map of the Hamiltonian ``sum_j dX^j h_j`` and therefore symplectic up
to solver tolerance. Tangent maps are propagated with the exact linearisation
of the converged step, the Cayley factor ``(I - M/2)^{-1} (I + M/2)``.

All work is vectorised over a leading batch axis of independent members
(initial points and/or noise paths). A member that has converged is frozen,
so its result is bitwise independent of which other members share the batch.
"""

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .geometry import HamiltonianSystem, PhaseState, symplectic_defects
from .errors import DimensionError, StepDivergence
from .noise import NoisePath


@dataclass(frozen=True)
class SchemeConfig:
    tol: float = 1e-13
    max_iter: int = 64
    defect_tol: float = 1e-9
    scheme: str = "midpoint"  # "euler-heun" is for comparisons only

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("fixed-point tolerance must be positive")
        if self.scheme not in ("midpoint", "euler-heun"):
            raise ValueError(f"unknown scheme {self.scheme!r}")


def _weighted_fields(system: HamiltonianSystem, t, z, dX, order: int):
    """Return ``sum_j dX_j X_{h_j}``, and for order 2 also ``sum_j dX_j Hess h_j`` and ``sum_j dX_j h_j``."""
    n = system.n
    vec = np.zeros_like(z)
    hess = np.zeros(z.shape + (2 * n,)) if order >= 2 else None
    val = np.zeros(z.shape[:-1]) if order >= 2 else None
    for j, h in enumerate(system.fields):
        if h.is_zero:
            continue
        w = dX[..., j]
        if not np.any(w):
            continue
        e = h.evaluate(t, z, order=order, check=False)
        g = e.grad
        vec[..., :n] += w[..., None] * g[..., n:]
        vec[..., n:] -= w[..., None] * g[..., :n]
        if order >= 2:
            hess += w[..., None, None] * e.hessian
            val += w * e.value
    return vec, hess, val


def _omega_times(H: np.ndarray, n: int) -> np.ndarray:
    out = np.empty_like(H)
    out[..., :n, :] = H[..., n:, :]
    out[..., n:, :] = -H[..., :n, :]
    return out


def _scale(z: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.max(np.abs(z), axis=-1))


def _newton(system, t_mid, z, z_new, dX, cfg):
    """Newton iterations on ``F(w) = w - z - drift((z + w)/2)``; returns (w, converged)."""
    n = system.n
    eye = np.eye(2 * n)
    w = z_new.copy()
    ok = np.zeros(len(z), dtype=bool)
    active = np.arange(len(z))
    for _ in range(cfg.max_iter):
        mid = 0.5 * (z[active] + w[active])
        vec, hess, _ = _weighted_fields(system, t_mid, mid, dX[active], 2)
        F = w[active] - z[active] - vec
        A = eye - 0.5 * _omega_times(hess, n)
        finite = np.all(np.isfinite(F), axis=-1) & np.all(np.isfinite(A), axis=(-2, -1))
        step = np.zeros_like(F)
        if np.any(finite):
            try:
                step[finite] = np.linalg.solve(A[finite], F[finite][..., None])[..., 0]
            except np.linalg.LinAlgError:
                finite[:] = False
        w[active] = w[active] - step
        err = np.max(np.abs(step), axis=-1)
        done = finite & (err <= cfg.tol * _scale(w[active]))
        ok[active[done]] = True
        keep = finite & ~done
        active = active[keep]
        if active.size == 0:
            break
    return w, ok


def _solve_step(system, t_mid, z, dX, cfg):
    """Solve one implicit midpoint step for every member; returns (z_new, ok, iterations)."""
    if cfg.scheme == "euler-heun":
        v0, _, _ = _weighted_fields(system, t_mid, z, dX, 1)
        v1, _, _ = _weighted_fields(system, t_mid, z + v0, dX, 1)
        z_new = z + 0.5 * (v0 + v1)
        return z_new, np.all(np.isfinite(z_new), axis=-1), 2

    z_new = z.copy()
    ok = np.zeros(len(z), dtype=bool)
    active = np.arange(len(z))
    prev = np.full(len(z), np.inf)
    stalled = []
    iters = 0
    for it in range(cfg.max_iter):
        iters += 1
        zs = z[active]
        vec, _, _ = _weighted_fields(system, t_mid, 0.5 * (zs + z_new[active]), dX[active], 1)
        cand = zs + vec
        err = np.max(np.abs(cand - z_new[active]), axis=-1)
        z_new[active] = cand
        finite = np.all(np.isfinite(cand), axis=-1)
        done = finite & (err <= cfg.tol * _scale(cand))
        ok[active[done]] = True
        stall = ~done & (~finite | ((it >= 3) & (err >= 0.9 * prev[active])))
        if np.any(stall):
            stalled.append(active[stall])
        keep = ~done & ~stall
        prev[active] = err
        active = active[keep]
        if active.size == 0:
            break
    rest = np.concatenate(stalled + [active]) if stalled or active.size else np.empty(0, int)
    if rest.size:
        rest = np.sort(rest)
        restart = np.where(np.all(np.isfinite(z_new[rest]), axis=-1)[:, None], z_new[rest], z[rest])
        w, conv = _newton(system, t_mid, z[rest], restart, dX[rest], cfg)
        z_new[rest] = w
        ok[rest] = conv
    return z_new, ok, iters


@dataclass
class BatchResult:
    final: np.ndarray                 # (B, 2n)
    action: np.ndarray | None         # (B,)
    jacobian: np.ndarray | None       # (B, 2n, 2n)
    failed: np.ndarray                # (B,) bool
    fail_step: np.ndarray             # (B,) int, -1 when fine
    step_defect: np.ndarray | None    # (B,) max per-step defect
    states: np.ndarray | None = None  # (K+1, B, 2n)
    jacobians: np.ndarray | None = None
    actions: np.ndarray | None = None  # (K+1, B)
    iterations: int = 0


def action_increment(system: HamiltonianSystem, t_mid, z, z_new, dX, hval=None) -> np.ndarray:
    """``p_mid . (q' - q) - sum_j h_j(mid) dX^j`` for batched states."""
    n = system.n
    mid = 0.5 * (z + z_new)
    if hval is None:
        hval = np.zeros(z.shape[:-1])
        for j, h in enumerate(system.fields):
            if h.is_zero or not np.any(dX[..., j]):
                continue
            hval = hval + dX[..., j] * h.evaluate(t_mid, mid, order=1, check=False).value
    return np.sum(mid[..., n:] * (z_new[..., :n] - z[..., :n]), axis=-1) - hval


def run_batch(system: HamiltonianSystem, z0, increments, t_mids, cfg: SchemeConfig = SchemeConfig(),
              n_steps=None, with_jacobian: bool = False, with_action: bool = False,
              keep_history: bool = False, track_defect: bool = True) -> BatchResult:
    """Integrate a batch of members, each with its own initial point and increments.

    ``increments`` has shape ``(B, K, r+1)``; ``t_mids`` holds the K step
    midpoint times shared by all members. Member ``b`` only takes its first
    ``n_steps[b]`` steps and is frozen afterwards.
    """
    z = np.array(z0, dtype=float)
    inc = np.asarray(increments, dtype=float)
    if z.ndim != 2 or inc.ndim != 3 or inc.shape[0] != z.shape[0]:
        raise DimensionError("expected z0 of shape (B, 2n) and increments of shape (B, K, r+1)")
    if z.shape[1] != 2 * system.n:
        raise DimensionError(f"initial points have {z.shape[1]} coordinates, system needs {2 * system.n}")
    if inc.shape[2] != system.r + 1:
        raise DimensionError(f"noise has {inc.shape[2] - 1} channels, system has {system.r}")
    B, K = inc.shape[:2]
    n = system.n
    steps = np.full(B, K) if n_steps is None else np.asarray(n_steps, dtype=int)
    need_eval = with_jacobian or with_action
    if with_jacobian and cfg.scheme != "midpoint":
        raise ValueError("tangent maps are only available for the midpoint scheme")

    R = np.zeros(B) if with_action else None
    J = np.broadcast_to(np.eye(2 * n), (B, 2 * n, 2 * n)).copy() if with_jacobian else None
    sdef = np.zeros(B) if with_jacobian and track_defect else None
    failed = np.zeros(B, dtype=bool)
    fail_step = np.full(B, -1)
    states = jacs = acts = None
    if keep_history:
        states = np.empty((K + 1, B, 2 * n))
        states[0] = z
        if with_jacobian:
            jacs = np.empty((K + 1, B, 2 * n, 2 * n))
            jacs[0] = J
        if with_action:
            acts = np.zeros((K + 1, B))
    eye = np.eye(2 * n)
    iters = 0
    for l in range(K):
        idx = np.nonzero((steps > l) & ~failed)[0]
        if idx.size:
            t_mid = float(t_mids[l])
            zs, dX = z[idx], inc[idx, l]
            z_new, ok, it = _solve_step(system, t_mid, zs, dX, cfg)
            iters += it
            bad = idx[~ok]
            failed[bad] = True
            fail_step[bad] = l
            good = ok
            if need_eval and np.any(good):
                g_idx = idx[good]
                zg, zng, dXg = zs[good], z_new[good], dX[good]
                mid = 0.5 * (zg + zng)
                _, hess, hval = _weighted_fields(system, t_mid, mid, dXg, 2)
                if with_action:
                    R[g_idx] += action_increment(system, t_mid, zg, zng, dXg, hval)
                if with_jacobian:
                    M = 0.5 * _omega_times(hess, n)
                    C = np.linalg.solve(eye - M, eye + M)
                    J[g_idx] = C @ J[g_idx]
                    if sdef is not None:
                        sdef[g_idx] = np.maximum(sdef[g_idx], symplectic_defects(C))
            z[idx[good]] = z_new[good]
        if keep_history:
            states[l + 1] = z
            if jacs is not None:
                jacs[l + 1] = J
            if acts is not None:
                acts[l + 1] = R
    return BatchResult(z, R, J, failed, fail_step, sdef, states, jacs, acts, iters)


@dataclass
class Trajectory:
    """States (and optionally tangent maps and running action) along one path."""

    times: np.ndarray
    states: np.ndarray                    # (K+1, 2n)
    jacobians: np.ndarray | None = None   # (K+1, 2n, 2n)
    step_defect: float | None = None
    iterations: int = 0
    stats: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[1] // 2

    def state(self, k: int) -> PhaseState:
        return PhaseState.from_array(self.states[k])

    def defects(self) -> np.ndarray:
        if self.jacobians is None:
            raise ValueError("trajectory was integrated without tangent maps")
        return symplectic_defects(self.jacobians)

    def to_csv(self, path) -> None:
        n = self.n
        defects = self.defects() if self.jacobians is not None else None
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k"] + [f"q{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)] + ["defect_k"])
            for k, (t, z) in enumerate(zip(self.times, self.states)):
                d = "" if defects is None else repr(float(defects[k]))
                w.writerow([k, repr(float(t))] + [repr(float(x)) for x in z] + [d])


def _z_array(z0) -> np.ndarray:
    if isinstance(z0, PhaseState):
        return z0.as_array()
    return np.asarray(z0, dtype=float)


def step_midpoint(system: HamiltonianSystem, z, t_k: float, increments, cfg: SchemeConfig = SchemeConfig(),
                  dt: float | None = None) -> PhaseState:
    """One midpoint step from node time ``t_k``; ``dt`` defaults to ``increments[0]``."""
    dX = np.asarray(increments, dtype=float)
    if dX.shape != (system.r + 1,):
        raise DimensionError(f"expected {system.r + 1} increments, got {dX.shape}")
    step_dt = dX[0] if dt is None else dt
    z_new, ok, _ = _solve_step(system, t_k + 0.5 * step_dt, _z_array(z)[None], dX[None], cfg)
    if not ok[0]:
        raise StepDivergence("midpoint iteration did not converge; reduce dt")
    return PhaseState.from_array(z_new[0])


def integrate_flow(system: HamiltonianSystem, z0, path: NoisePath, cfg: SchemeConfig = SchemeConfig(),
                   with_jacobian: bool = False) -> Trajectory:
    if path.r != system.r:
        raise DimensionError(f"path has {path.r} noise channels, system has {system.r}")
    grid = path.grid
    t_mids = grid.t_mid(np.arange(grid.steps))
    res = run_batch(system, _z_array(z0)[None], path.increments[None], t_mids, cfg,
                    with_jacobian=with_jacobian, keep_history=True)
    if res.failed[0]:
        raise StepDivergence("midpoint iteration did not converge; reduce dt", int(res.fail_step[0]))
    return Trajectory(
        times=grid.times,
        states=res.states[:, 0],
        jacobians=None if res.jacobians is None else res.jacobians[:, 0],
        step_defect=None if res.step_defect is None else float(res.step_defect[0]),
        iterations=res.iterations,
    )


def reversed_increments(path: NoisePath, up_to_k: int):
    """Negated increments in reverse order with the midpoint times of the original steps."""
    grid = path.grid
    inc = -path.increments[:up_to_k][::-1]
    t_mids = grid.t_mid(np.arange(up_to_k))[::-1]
    return inc, t_mids


def inverse_flow_point(system: HamiltonianSystem, z_t, path: NoisePath, up_to_k: int,
                       cfg: SchemeConfig = SchemeConfig(), with_jacobian: bool = False):
    """Map a point at node ``up_to_k`` back to time 0 by undoing the steps in reverse.

    With ``with_jacobian`` the tangent map of the inverse flow is returned as a
    second value.
    """
    if not 0 <= up_to_k <= path.grid.steps:
        raise ValueError(f"node {up_to_k} outside the grid")
    z = _z_array(z_t)
    if up_to_k == 0:
        point = PhaseState.from_array(z)
        return (point, np.eye(z.size)) if with_jacobian else point
    inc, t_mids = reversed_increments(path, up_to_k)
    res = run_batch(system, z[None], inc[None], t_mids, cfg, with_jacobian=with_jacobian)
    if res.failed[0]:
        raise StepDivergence("inverse midpoint iteration did not converge", int(up_to_k - 1 - res.fail_step[0]))
    point = PhaseState.from_array(res.final[0])
    return (point, res.jacobian[0]) if with_jacobian else point
