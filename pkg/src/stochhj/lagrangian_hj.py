"""Lagrangian sections, the shooting map and the stochastic Hamilton-Jacobi check.

For a section ``L_f = {(a, grad f(a))}`` and a target configuration ``x`` we
look, at every node ``t_k``, for the base point ``a_k`` whose flow lands
over ``x``: ``q(phi_{t_k}(a_k, grad f(a_k))) = x``. Each Newton evaluation
re-integrates the flow from time 0 on the same noise path, so a full
shooting path costs O(K^2) steps. Nodes are solved in chunks that are
integrated together as one batch; each chunk is warm-started from the last
solution of the previous one.
"""

import csv
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .dsl import ScalarField
from .errors import DimensionError, TruncationMismatch
from .geometry import HamiltonianSystem, PhaseState
from .integrator import SchemeConfig, run_batch
from .noise import NoisePath


@dataclass(frozen=True)
class LagrangianSection:
    """Graph of ``df``; ``f`` is a phase-space field that only reads ``q``."""

    f: ScalarField

    def __post_init__(self):
        if self.f.uses_y:
            raise ValueError("a section potential must not depend on momenta")

    @property
    def n(self) -> int:
        return self.f.n

    def derivatives(self, a):
        """Value, gradient and Hessian of ``f`` at (batched) base points ``a``."""
        e = self.f.on_q(0.0, a, order=2)
        n = self.n
        return e.value, e.grad[..., :n], e.hessian[..., :n, :n]


def lift(section: LagrangianSection, a):
    """``a -> (a, grad f(a))``; returns a PhaseState for a single point, an array otherwise."""
    a = np.asarray(a, dtype=float)
    single = a.ndim == 1
    a2 = np.atleast_2d(a)
    _, grad, _ = section.derivatives(a2)
    z = np.concatenate([a2, grad], axis=-1)
    return PhaseState.from_array(z[0]) if single else z


@dataclass(frozen=True)
class ShootingConfig:
    tol: float = 1e-11
    max_iter: int = 25
    eps_det: float = 1e-8
    chunk: int = 512
    scheme: SchemeConfig = SchemeConfig()


@dataclass
class ShootingPath:
    """Shooting results at the requested nodes; entries at or after ``xi_idx`` are NaN."""

    x: np.ndarray
    nodes: np.ndarray
    times: np.ndarray
    a: np.ndarray          # (N, n) base points
    u: np.ndarray          # (N, 2n) fiber points phi_t(psi_t(x))
    det: np.ndarray        # (N,)
    action: np.ndarray     # (N,) R_t(psi_t)
    s_tilde: np.ndarray    # (N,)
    shoot_error: np.ndarray
    iterations: np.ndarray
    xi_idx: int            # first truncated node index (grid.steps + 1 when none)
    residual: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def valid(self) -> np.ndarray:
        return self.nodes < self.xi_idx

    def momentum(self) -> np.ndarray:
        return self.u[:, self.n:]

    def to_csv(self, path) -> None:
        n = self.n
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k"] + [f"a{i+1}" for i in range(n)] + [f"p{i+1}" for i in range(n)]
                       + ["d_k", "S_tilde_k", "residual_k"])
            for i, k in enumerate(self.nodes):
                res = "" if self.residual is None else _fmt(self.residual[i])
                w.writerow([int(k), _fmt(self.times[i])] + [_fmt(v) for v in self.a[i]]
                           + [_fmt(v) for v in self.u[i, n:]] + [_fmt(self.det[i]), _fmt(self.s_tilde[i]), res])


def _fmt(v) -> str:
    return repr(float(v))


def _newton_members(system, section, x, inc, t_mids, steps, a0, cfg: ShootingConfig):
    """Vectorised Newton shooting for independent members (one per row)."""
    B, n = x.shape
    a = a0.copy()
    u = np.full((B, 2 * n), np.nan)
    R = np.full(B, np.nan)
    det = np.full(B, np.nan)
    err = np.full(B, np.nan)
    iters = np.zeros(B, dtype=int)
    ok = np.zeros(B, dtype=bool)
    active = np.arange(B)
    for _ in range(cfg.max_iter):
        if active.size == 0:
            break
        iters[active] += 1
        _, grad, hess_f = section.derivatives(a[active])
        z0 = np.concatenate([a[active], grad], axis=-1)
        res = run_batch(system, z0, inc[active], t_mids, cfg.scheme, n_steps=steps[active],
                        with_jacobian=True, with_action=True, track_defect=False)
        J = res.jacobian
        Jq = J[:, :n, :n] + J[:, :n, n:] @ hess_f
        resid = res.final[:, :n] - x[active]
        d = np.linalg.det(Jq)
        u[active], R[active], det[active] = res.final, res.action, d
        e = np.max(np.abs(resid), axis=-1)
        err[active] = e
        alive = ~res.failed & np.isfinite(e)
        conv = alive & (e <= cfg.tol)
        ok[active[conv]] = True
        go = alive & ~conv & (np.abs(d) > 1e-300)
        if np.any(go):
            a[active[go]] -= np.linalg.solve(Jq[go], resid[go][..., None])[..., 0]
        active = active[go]
    return a, u, R, det, err, iters, ok


def shoot_many(system: HamiltonianSystem, section: LagrangianSection, xs, paths: list[NoisePath],
               cfg: ShootingConfig = ShootingConfig(), nodes=None) -> list[ShootingPath]:
    """Solve the shooting problem for several (x, path) problems at once.

    ``xs`` has shape ``(P, n)`` and pairs row-wise with ``paths``. ``nodes``
    selects grid nodes (ascending); by default every node ``0..K`` is solved.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    P, n = xs.shape
    if len(paths) != P:
        raise DimensionError(f"{P} target points but {len(paths)} paths")
    if n != system.n or section.n != n:
        raise DimensionError("target points, system and section disagree on dimension")
    grid = paths[0].grid
    if any(p.grid != grid for p in paths):
        raise DimensionError("all paths must share one grid")
    K = grid.steps
    nodes = np.arange(K + 1) if nodes is None else np.asarray(sorted(set(int(k) for k in nodes)))
    if nodes.size == 0 or nodes[0] < 0 or nodes[-1] > K:
        raise ValueError("requested nodes fall outside the grid")
    N = nodes.size
    t_mids = grid.t_mid(np.arange(K))
    inc_all = np.stack([p.increments for p in paths])

    a_out = np.full((P, N, n), np.nan)
    u_out = np.full((P, N, 2 * n), np.nan)
    det_out = np.full((P, N), np.nan)
    R_out = np.full((P, N), np.nan)
    err_out = np.full((P, N), np.nan)
    it_out = np.zeros((P, N), dtype=int)
    xi = np.full(P, K + 1)
    warm = xs.copy()

    for start in range(0, N, cfg.chunk):
        live = np.nonzero(xi > nodes[start])[0]
        if live.size == 0:
            break
        block = nodes[start:start + cfg.chunk]
        m = block.size
        prob = np.repeat(live, m)
        slot = np.tile(np.arange(start, start + m), live.size)
        steps = nodes[slot]
        a, u, R, det, err, iters, ok = _newton_members(
            system, section, xs[prob], inc_all[prob], t_mids, steps, warm[prob], cfg)
        a_out[prob, slot], u_out[prob, slot], det_out[prob, slot] = a, u, det
        R_out[prob, slot], err_out[prob, slot], it_out[prob, slot] = R, err, iters
        good = (ok & (det > cfg.eps_det)).reshape(live.size, m)
        for row, pidx in enumerate(live):
            bad = np.nonzero(~good[row])[0]
            if bad.size:
                xi[pidx] = nodes[start + bad[0]]
            else:
                warm[pidx] = a[row * m + m - 1]

    out = []
    for i in range(P):
        mask = nodes >= xi[i]
        a_i, u_i = a_out[i].copy(), u_out[i].copy()
        det_i, R_i = det_out[i].copy(), R_out[i].copy()
        a_i[mask], u_i[mask], R_i[mask] = np.nan, np.nan, np.nan
        f_val = np.full(N, np.nan)
        if np.any(~mask):
            f_val[~mask] = section.derivatives(a_i[~mask])[0]
        out.append(ShootingPath(
            x=xs[i].copy(), nodes=nodes.copy(), times=grid.times[nodes], a=a_i, u=u_i, det=det_i,
            action=R_i, s_tilde=R_i + f_val, shoot_error=err_out[i], iterations=it_out[i],
            xi_idx=int(xi[i]), meta={"seed": paths[i].seed, "path_index": paths[i].path_index},
        ))
    return out


def shoot(system: HamiltonianSystem, section: LagrangianSection, x, path: NoisePath,
          cfg: ShootingConfig = ShootingConfig(), nodes=None) -> ShootingPath:
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return shoot_many(system, section, x[None], [path], cfg, nodes)[0]


def projected_action(system, section, x, path, cfg: ShootingConfig = ShootingConfig(), nodes=None) -> ShootingPath:
    """``S~_k = R_{t_k}(psi_k) + f(a_k)``; the shooting path already carries it."""
    return shoot(system, section, x, path, cfg, nodes)


def hj_residual(system: HamiltonianSystem, section: LagrangianSection, x, path: NoisePath,
                cfg: ShootingConfig = ShootingConfig(), sp: ShootingPath | None = None):
    """Residual of ``S~ = f(x) - int <h(x, dS~/dq), dX>`` at every node.

    The integral is the midpoint sum with ``dS~/dq`` at step ``l`` taken as
    the average of ``p(u_l)`` and ``p(u_{l+1})``. Returns the shooting path
    (with ``residual`` filled, NaN from ``xi_idx`` on) and the max absolute
    residual before truncation.
    """
    if sp is None:
        sp = shoot(system, section, x, path, cfg)
    K = path.grid.steps
    if sp.nodes.size != K + 1:
        raise ValueError("the residual needs the shooting solution at every node")
    n = sp.n
    x = sp.x
    p = sp.momentum()
    p_mid = 0.5 * (p[:-1] + p[1:])
    z_mid = np.concatenate([np.broadcast_to(x, p_mid.shape), p_mid], axis=-1)
    t_mids = path.grid.t_mid(np.arange(K))
    ok = np.all(np.isfinite(z_mid), axis=-1)
    integrand = np.zeros(K)
    for j, h in enumerate(system.fields):
        if h.is_zero:
            continue
        vals = np.zeros(K)
        if np.any(ok):
            vals[ok] = h.evaluate(t_mids[ok], z_mid[ok], order=1).value
        integrand += vals * path.increments[:, j]
    integrand[~ok] = np.nan
    running = np.zeros(K + 1)
    np.cumsum(integrand, out=running[1:])
    f_x = float(section.derivatives(x[None])[0][0])
    residual = sp.s_tilde - f_x + running
    residual[sp.nodes >= sp.xi_idx] = np.nan
    sp.residual = residual
    valid = residual[np.isfinite(residual)]
    return sp, float(np.max(np.abs(valid))) if valid.size else 0.0


def d_s_tilde(system: HamiltonianSystem, section: LagrangianSection, x, path: NoisePath, k: int,
              mode: str = "formula", h_fd: float = 1e-4, cfg: ShootingConfig = ShootingConfig()) -> np.ndarray:
    """Spatial derivative of ``S~_k`` at ``x``: ``p(u_k)`` or central differences over x."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    nodes = np.arange(k + 1)
    if mode == "formula":
        sp = shoot(system, section, x, path, cfg, nodes)
        if k >= sp.xi_idx:
            raise TruncationMismatch(f"node {k} lies past the stopping index {sp.xi_idx}")
        return sp.momentum()[k]
    if mode != "fd":
        raise ValueError(f"unknown mode {mode!r}")
    return fd_gradients(system, section, x, path, h_fd, cfg, nodes=nodes, strict_node=k)[k]


def fd_gradients(system, section, x, path, h_fd: float = 1e-4, cfg: ShootingConfig = ShootingConfig(),
                 nodes=None, strict_node: int | None = None, base: ShootingPath | None = None) -> np.ndarray:
    """Central-difference gradients of ``S~`` over x at every requested node, same path for all probes.

    Nodes at or past the earliest probe truncation are NaN; if ``strict_node``
    is among them a TruncationMismatch is raised.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    probes = np.concatenate([x + h_fd * np.eye(n), x - h_fd * np.eye(n)])
    sps = shoot_many(system, section, probes, [path] * (2 * n), cfg, nodes)
    xi = min(sp.xi_idx for sp in sps)
    if base is not None:
        xi = min(xi, base.xi_idx)
    if strict_node is not None and strict_node >= xi:
        raise TruncationMismatch(f"a finite-difference probe truncated at node {xi} before node {strict_node}")
    S = np.stack([sp.s_tilde for sp in sps])
    grad = ((S[:n] - S[n:]) / (2.0 * h_fd)).T
    grad[sps[0].nodes >= xi] = np.nan
    return grad
