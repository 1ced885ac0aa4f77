import math

import numpy as np
import pytest

from stochhj import catalog
from stochhj.action import (accumulate_action, action_along, action_gradient, action_gradients, fd_action_gradient,
                            fd_action_gradients, hat_r_gradient_check, hat_r_gradient_checks)
from stochhj.dsl import field
from stochhj.errors import DimensionError, StateError
from stochhj.geometry import HamiltonianSystem
from stochhj.integrator import integrate_flow, run_batch
from stochhj.noise import NoisePath, TimeGrid, sample_path


def _zero_noise(grid, r=0):
    inc = np.zeros((grid.steps, r + 1))
    inc[:, 0] = grid.dt
    return NoisePath(grid, inc)


@pytest.mark.parametrize("c", [0.0, 0.8, -1.5])
def test_translation_action_vanishes(c):
    path = sample_path(TimeGrid(1.0, 128), 1, seed=2)
    ap = action_along(catalog.system("translation"), [0.3, c], path)
    assert ap.values[0] == 0.0
    assert np.max(np.abs(ap.values)) <= 1e-13


def test_free_particle_zero_noise_action():
    g = TimeGrid(2.0, 40)
    ap = action_along(HamiltonianSystem([field("p1^2/2")]), [0.1, 1.3], _zero_noise(g))
    np.testing.assert_allclose(ap.values, 1.3 ** 2 * g.times / 2, atol=1e-13)


def test_grid_mismatch():
    path = sample_path(TimeGrid(1.0, 16), 1, seed=0)
    traj = integrate_flow(catalog.system("pendulum"), [0.0, 1.0], path)
    with pytest.raises(DimensionError):
        accumulate_action(traj, sample_path(TimeGrid(1.0, 8), 1, seed=0), catalog.system("pendulum"))


def test_gradient_needs_jacobians():
    path = sample_path(TimeGrid(1.0, 8), 1, seed=0)
    with pytest.raises(StateError):
        action_gradient(integrate_flow(catalog.system("pendulum"), [0.0, 1.0], path))


def test_gradient_at_node_zero_is_zero():
    path = sample_path(TimeGrid(1.0, 8), 1, seed=0)
    traj = integrate_flow(catalog.system("pendulum"), [0.4, 1.0], path, with_jacobian=True)
    np.testing.assert_array_equal(action_gradient(traj, k=0).as_array(), np.zeros(2))
    np.testing.assert_array_equal(fd_action_gradient(catalog.system("pendulum"), [0.4, 1.0], path, 0).as_array(),
                                  np.zeros(2))


def test_translation_gradient_is_zero():
    path = sample_path(TimeGrid(1.0, 64), 1, seed=6)
    traj = integrate_flow(catalog.system("translation"), [0.4, 1.0], path, with_jacobian=True)
    np.testing.assert_allclose(action_gradient(traj).as_array(), 0.0, atol=1e-14)


def test_free_particle_zero_noise_gradient():
    g = TimeGrid(1.5, 30)
    traj = integrate_flow(HamiltonianSystem([field("p1^2/2")]), [0.2, 0.9], _zero_noise(g), with_jacobian=True)
    np.testing.assert_allclose(action_gradient(traj).as_array(), [0.0, 0.9 * 1.5], atol=1e-13)


def test_linear_field_gradient_matches_classical_action():
    """Zero path, h = p^2/2 + c q: dR = (-c t, p0 t - c t^2) exactly (discretization error is constant in z0)."""
    c, t, p0 = 0.7, 1.0, 0.4
    sys = HamiltonianSystem([field(f"p1^2/2 + {c}*q1")])
    path = _zero_noise(TimeGrid(t, 200))
    z0 = [0.3, p0]
    exact = [-c * t, p0 * t - c * t ** 2]
    traj = integrate_flow(sys, z0, path, with_jacobian=True)
    np.testing.assert_allclose(action_gradient(traj).as_array(), exact, atol=1e-8)
    np.testing.assert_allclose(fd_action_gradient(sys, z0, path, 200).as_array(), exact, atol=1e-8)


def test_fd_matches_analytic_on_pendulum_draws(rng):
    sys = catalog.system("pendulum")
    g = TimeGrid(1.0, 128)
    for m in range(20):
        path = sample_path(g, 1, seed=31, path_index=m)
        z0 = rng.uniform(-1.5, 1.5, 2)
        traj = integrate_flow(sys, z0, path, with_jacobian=True)
        a = action_gradient(traj).as_array()
        fd = fd_action_gradient(sys, z0, path, g.steps, h_fd=1e-4).as_array()
        assert np.max(np.abs(a - fd)) <= 1e-5 * max(1.0, np.max(np.abs(fd)))


def _systems_r(r):
    extra = ["p1", "0.5*q1"][:r]
    return {
        "free": HamiltonianSystem([field(s) for s in ["p1^2/2"] + extra]),
        "pendulum": HamiltonianSystem([field(s) for s in ["p1^2/2 + cos(q1)"] + extra]),
        "oscillator": HamiltonianSystem([field(s) for s in ["(q1^2+p1^2)/2"] + extra]),
    }


@pytest.mark.parametrize("r", [1, 2])
@pytest.mark.parametrize("name", ["free", "pendulum", "oscillator"])
def test_dr_identity_invariant(name, r, rng):
    sys = _systems_r(r)[name]
    g = TimeGrid(1.0, 128)
    worst = 0.0
    for m in range(20):
        path = sample_path(g, r, seed=40 + r, path_index=m)
        z0 = rng.uniform(-1, 1, 2)
        traj = integrate_flow(sys, z0, path, with_jacobian=True)
        a = action_gradient(traj).as_array()
        fd = fd_action_gradient(sys, z0, path, g.steps).as_array()
        worst = max(worst, np.max(np.abs(a - fd)) / (1.0 + np.max(np.abs(a))))
    assert worst <= 1e-4


def test_hat_r_examples(rng):
    path = sample_path(TimeGrid(1.0, 64), 1, seed=12)
    assert hat_r_gradient_check(catalog.system("pendulum"), [0.1, 0.2], path, 0) == 0.0
    assert hat_r_gradient_check(catalog.system("translation"), [0.1, 0.2], path, 64) <= 1e-10
    sys = catalog.system("pendulum")
    for m in range(5):
        p = sample_path(TimeGrid(1.0, 64), 1, seed=13, path_index=m)
        traj = integrate_flow(sys, rng.uniform(-1, 1, 2), p)
        assert hat_r_gradient_check(sys, traj.states[-1], p, 64) <= 1e-6


def test_action_additive_over_concatenation():
    sys = catalog.system("pendulum")
    path = sample_path(TimeGrid(1.0, 100), 1, seed=3)
    full = action_along(sys, [0.5, -0.2], path)
    m = 37
    t_mids = path.grid.t_mid(np.arange(100))
    tail = run_batch(sys, full.trajectory.states[m][None], path.increments[None, m:], t_mids[m:], with_action=True)
    assert tail.final.tobytes() == full.trajectory.states[-1][None].tobytes()
    assert full.values[-1] == pytest.approx(full.values[m] + tail.action[0], abs=1e-13)


def test_oscillator_loop_area():
    """Over one period, sum p dq (= R + E T) encloses the disc area pi rho^2."""
    K = 8192
    g = TimeGrid(2 * math.pi, K)
    sys = catalog.system("harmonic")
    z0 = np.array([1.2, 0.0])
    ap = action_along(sys, z0, _zero_noise(g))
    energy = 0.5 * float(z0 @ z0)
    area = ap.values[-1] + energy * g.t_end
    assert area == pytest.approx(math.pi * 1.44, rel=1e-6)


def test_action_csv(tmp_path):
    path = sample_path(TimeGrid(1.0, 4), 1, seed=0)
    ap = action_along(catalog.system("pendulum"), [0.5, 0.0], path)
    ap.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "k,t_k,R_k"
    assert lines[1].endswith(",0.0")


def test_batched_checks_match_single_draws(rng):
    sys = catalog.system("pendulum")
    paths = [sample_path(TimeGrid(1.0, 32), 1, seed=8, path_index=m) for m in range(4)]
    z0s = rng.uniform(-1, 1, (4, 2))
    grads, finals = action_gradients(sys, z0s, paths, 32)
    fds = fd_action_gradients(sys, z0s, paths, 32)
    hats = hat_r_gradient_checks(sys, finals, paths, 32)
    for b in range(4):
        traj = integrate_flow(sys, z0s[b], paths[b], with_jacobian=True)
        assert grads[b].tobytes() == action_gradient(traj).as_array().tobytes()
        assert finals[b].tobytes() == traj.states[-1].tobytes()
        assert fds[b].tobytes() == fd_action_gradient(sys, z0s[b], paths[b], 32).as_array().tobytes()
        assert hats[b] == hat_r_gradient_check(sys, finals[b], paths[b], 32)
