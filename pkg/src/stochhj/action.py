"""Pathwise stochastic action and checks of its differential.

The action increment over a step is ``p_mid . dq - sum_j h_j(mid) dX^j`` at the
same midpoint the integrator used, i.e. the discrete form of
``int <theta, dGamma> - int <h(Gamma), dX>``.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, StateError, StepDivergence
from .geometry import CotangentVector, HamiltonianSystem, PhaseState, liouville_form
from .integrator import SchemeConfig, Trajectory, action_increment, integrate_flow, run_batch
from .noise import NoisePath


@dataclass
class ActionPath:
    values: np.ndarray
    trajectory: Trajectory
    path: NoisePath

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k", "R_k"])
            for k, (t, r) in enumerate(zip(self.trajectory.times, self.values)):
                w.writerow([k, repr(float(t)), repr(float(r))])


def accumulate_action(traj: Trajectory, path: NoisePath, system: HamiltonianSystem) -> ActionPath:
    K = path.grid.steps
    if traj.states.shape[0] != K + 1:
        raise DimensionError(f"trajectory has {traj.states.shape[0]} nodes, path has {K + 1}")
    t_mids = path.grid.t_mid(np.arange(K))
    dR = action_increment(system, t_mids, traj.states[:-1], traj.states[1:], path.increments)
    values = np.zeros(K + 1)
    np.cumsum(dR, out=values[1:])
    return ActionPath(values, traj, path)


def action_gradient(traj: Trajectory, z0=None, k: int | None = None) -> CotangentVector:
    """``dR_t = phi_t^* theta - theta`` from the propagated tangent map: ``J_k^T theta(Gamma_k) - theta(z0)``."""
    if traj.jacobians is None:
        raise StateError("action_gradient needs a trajectory integrated with tangent maps")
    k = traj.states.shape[0] - 1 if k is None else k
    z0 = traj.states[0] if z0 is None else (z0.as_array() if isinstance(z0, PhaseState) else np.asarray(z0, float))
    grad = traj.jacobians[k].T @ liouville_form(traj.states[k]) - liouville_form(z0)
    return CotangentVector.from_array(grad)


def action_gradients(system: HamiltonianSystem, z0s, paths: list[NoisePath], k: int,
                     cfg: SchemeConfig = SchemeConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Batched :func:`action_gradient` at node ``k``; returns ``(dR, Gamma_k)`` with one row per draw."""
    z0s = np.atleast_2d(np.asarray(z0s, dtype=float))
    inc, t_mids = _stack_paths(paths, k)
    res = run_batch(system, z0s, inc, t_mids, cfg, n_steps=np.full(len(z0s), k), with_jacobian=True)
    if res.failed.any():
        raise StepDivergence("midpoint iteration did not converge", int(res.fail_step[res.failed][0]))
    JT = np.swapaxes(res.jacobian, -1, -2)
    grad = np.einsum("bij,bj->bi", JT, liouville_form(res.final)) - liouville_form(z0s)
    return grad, res.final


def _stack_paths(paths: list[NoisePath], k: int):
    grid = paths[0].grid
    if any(p.grid != grid for p in paths):
        raise DimensionError("all paths must share one grid")
    if not 0 <= k <= grid.steps:
        raise ValueError(f"node {k} outside the grid")
    return np.stack([p.increments for p in paths]), grid.t_mid(np.arange(grid.steps))


def fd_action_gradients(system: HamiltonianSystem, z0s, paths: list[NoisePath], k: int, h_fd: float = 1e-4,
                        cfg: SchemeConfig = SchemeConfig(), richardson: bool = True) -> np.ndarray:
    """Batched :func:`fd_action_gradient`: row ``b`` differentiates ``R_k`` at ``z0s[b]`` on ``paths[b]``.

    Every probe of every draw is one member of a single integration batch.
    """
    if h_fd <= 0:
        raise ValueError("finite-difference step must be positive")
    z0s = np.atleast_2d(np.asarray(z0s, dtype=float))
    B, d = z0s.shape
    if k == 0:
        return np.zeros((B, d))
    inc, t_mids = _stack_paths(paths, k)
    scales = (1.0, 2.0) if richardson else (1.0,)
    offsets = np.concatenate([sign * s * h_fd * np.eye(d) for s in scales for sign in (1.0, -1.0)])
    P = len(offsets)
    probes = (z0s[:, None, :] + offsets[None]).reshape(B * P, d)
    res = run_batch(system, probes, np.repeat(inc, P, axis=0), t_mids, cfg, n_steps=np.full(B * P, k),
                    with_action=True)
    if res.failed.any():
        raise StepDivergence("finite-difference probe diverged", int(res.fail_step[res.failed][0]))
    R = res.action.reshape(B, len(scales), 2, d)
    D = (R[:, :, 0] - R[:, :, 1]) / (2.0 * h_fd * np.asarray(scales)[None, :, None])
    return (4.0 * D[:, 0] - D[:, 1]) / 3.0 if richardson else D[:, 0]


def fd_action_gradient(system: HamiltonianSystem, z0, path: NoisePath, k: int, h_fd: float = 1e-4,
                       cfg: SchemeConfig = SchemeConfig(), richardson: bool = True) -> CotangentVector:
    """Central differences of ``R_k`` in each coordinate of ``z0``, re-integrating on the same path.

    With ``richardson`` the two-level combination ``(4 D(h) - D(2h)) / 3`` is
    returned.
    """
    z0 = z0.as_array() if isinstance(z0, PhaseState) else np.asarray(z0, dtype=float)
    return CotangentVector.from_array(fd_action_gradients(system, z0[None], [path], k, h_fd, cfg, richardson)[0])


def hat_r_gradient_checks(system: HamiltonianSystem, z_ts, paths: list[NoisePath], k: int,
                          cfg: SchemeConfig = SchemeConfig()) -> np.ndarray:
    """Batched :func:`hat_r_gradient_check`; returns one discrepancy per row of ``z_ts``."""
    z_ts = np.atleast_2d(np.asarray(z_ts, dtype=float))
    B = z_ts.shape[0]
    if k == 0:
        return np.zeros(B)
    inc, t_mids = _stack_paths(paths, k)
    back = run_batch(system, z_ts, -inc[:, :k][:, ::-1], t_mids[:k][::-1], cfg, with_jacobian=True)
    if back.failed.any():
        raise StepDivergence("inverse midpoint iteration did not converge",
                             int(k - 1 - back.fail_step[back.failed][0]))
    z0s, J_inv = back.final, back.jacobian
    fwd = run_batch(system, z0s, inc, t_mids, cfg, n_steps=np.full(B, k), with_jacobian=True)
    if fwd.failed.any():
        raise StepDivergence("forward re-integration diverged", int(fwd.fail_step[fwd.failed][0]))
    J = fwd.jacobian
    JT = np.swapaxes(J, -1, -2)
    dR = np.einsum("bij,bj->bi", JT, liouville_form(fwd.final)) - liouville_form(z0s)
    route_pullback = np.linalg.solve(JT, dR[..., None])[..., 0]
    route_inverse = liouville_form(z_ts) - np.einsum("bji,bj->bi", J_inv, liouville_form(z0s))
    return np.max(np.abs(route_pullback - route_inverse), axis=-1)


def hat_r_gradient_check(system: HamiltonianSystem, z_t, path: NoisePath, k: int,
                         cfg: SchemeConfig = SchemeConfig()) -> float:
    """Compare two evaluations of ``d(R_t o phi_t^{-1})`` at ``z_t``.

    Route one pulls ``dR_t`` back through the inverse of the forward tangent
    map; route two assembles ``theta - (phi_t^{-1})^* theta`` from the tangent
    map of the inverse flow. Returns the max-norm of their difference.
    """
    z_t = z_t.as_array() if isinstance(z_t, PhaseState) else np.asarray(z_t, dtype=float)
    return float(hat_r_gradient_checks(system, z_t[None], [path], k, cfg)[0])


def action_along(system: HamiltonianSystem, z0, path: NoisePath, cfg: SchemeConfig = SchemeConfig(),
                 with_jacobian: bool = False) -> ActionPath:
    """Integrate and accumulate in one call."""
    traj = integrate_flow(system, z0, path, cfg, with_jacobian)
    return accumulate_action(traj, path, system)
