import numpy as np
import pytest

from stochhj import catalog
from stochhj.dsl import field
from stochhj.errors import DimensionError, StepDivergence
from stochhj.geometry import HamiltonianSystem, PhaseState, symplectic_defect
from stochhj.integrator import (SchemeConfig, integrate_flow, inverse_flow_point, run_batch, step_midpoint)
from stochhj.noise import TimeGrid, refine, sample_path


def _system(*srcs, n=1):
    return HamiltonianSystem([field(s, n) for s in srcs])


def test_zero_increments_fix_point():
    z = step_midpoint(catalog.system("pendulum"), PhaseState([0.3], [1.2]), 0.0, [0.0, 0.0])
    np.testing.assert_array_equal(z.as_array(), [0.3, 1.2])


def test_translation_step_exact():
    z = step_midpoint(_system("0", "p1"), PhaseState([1.0], [5.0]), 0.0, [0.1, 0.3])
    np.testing.assert_array_equal(z.as_array(), [1.3, 5.0])


def test_oscillator_step_is_cayley():
    dt = 0.1
    z = step_midpoint(catalog.system("harmonic"), PhaseState([0.7], [-0.2]), 0.0, [dt])
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    C = np.linalg.solve(np.eye(2) - 0.5 * dt * A, np.eye(2) + 0.5 * dt * A)
    np.testing.assert_allclose(z.as_array(), C @ [0.7, -0.2], atol=1e-12)


def test_step_wrong_increment_length():
    with pytest.raises(DimensionError):
        step_midpoint(catalog.system("pendulum"), PhaseState([0.0], [0.0]), 0.0, [0.1])


def test_step_divergence_on_huge_step():
    sys = _system("q1^4 + p1^4")
    with pytest.raises(StepDivergence):
        step_midpoint(sys, PhaseState([3.0], [3.0]), 0.0, [50.0], SchemeConfig(max_iter=8))


def test_translation_flow_closed_form():
    path = sample_path(TimeGrid(1.0, 256), 1, seed=3)
    traj = integrate_flow(catalog.system("translation"), PhaseState([0.2], [-0.4]), path)
    exact = catalog.translation_flow([0.2, -0.4], path.brownian[:, 0])
    np.testing.assert_allclose(traj.states, exact, atol=1e-13)


def test_free_particle_zero_noise_exact():
    sys = _system("p1^2/2")
    path = sample_path(TimeGrid(2.0, 50), 0, seed=0)
    traj = integrate_flow(sys, PhaseState([1.0], [0.7]), path)
    np.testing.assert_allclose(traj.states[:, 0], 1.0 + 0.7 * path.grid.times, atol=1e-13)


def test_single_channel_hamiltonian_conserved():
    # the midpoint map conserves quadratic first integrals exactly
    sys = _system("0", "(q1^2 + p1^2)/2 + 0.3*q1*p1 + 0.5*p1")
    path = sample_path(TimeGrid(1.0, 512), 1, seed=11)
    traj = integrate_flow(sys, PhaseState([0.4], [0.9]), path)
    h = sys.fields[1].value(0.0, traj.states)
    assert np.max(np.abs(h - h[0])) <= 1e-10


def test_initial_state_and_identity_jacobian():
    path = sample_path(TimeGrid(1.0, 32), 1, seed=1)
    traj = integrate_flow(catalog.system("pendulum"), [0.5, 0.1], path, with_jacobian=True)
    np.testing.assert_array_equal(traj.states[0], [0.5, 0.1])
    np.testing.assert_array_equal(traj.jacobians[0], np.eye(2))


def _random_system(n, r, rng):
    """A nonlinear Hamiltonian family in n degrees of freedom with r noise channels."""
    kinetic = " + ".join(f"p{i}^2/2" for i in range(1, n + 1))
    potential = " + ".join(f"cos(q{i})*{rng.uniform(0.5, 1.5):.3f}" for i in range(1, n + 1))
    coupling = " + 0.1*q1*q2" if n > 1 else ""
    fields = [f"{kinetic} + {potential}{coupling}"]
    for j in range(1, r + 1):
        i = (j - 1) % n + 1
        fields.append(f"p{i} + 0.2*sin(q{i})")
    return _system(*fields, n=n)


@pytest.mark.parametrize("n", [1, 2, 3])
@pytest.mark.parametrize("r", [0, 1, 2])
def test_symplectic_defects(n, r, rng):
    sys = _random_system(n, r, rng)
    K = 128
    path = sample_path(TimeGrid(1.0, K), r, seed=n * 10 + r)
    z0 = rng.uniform(-1, 1, 2 * n)
    traj = integrate_flow(sys, z0, path, with_jacobian=True)
    steps = [symplectic_defect(traj.jacobians[k + 1] @ np.linalg.inv(traj.jacobians[k])) for k in range(K)]
    assert max(steps) <= 1e-9
    assert traj.defects().max() <= K * 1e-9
    assert traj.step_defect <= 1e-9


def test_quadratic_jacobian_is_cayley_product():
    kappa = 2.0
    sys = catalog.system("quadratic_potential", kappa=kappa)
    path = sample_path(TimeGrid(1.0, 64), 1, seed=5)
    traj = integrate_flow(sys, [0.3, 0.1], path, with_jacobian=True)
    A = np.array([[0.0, 1.0], [-kappa, 0.0]]) * path.grid.dt
    C = np.linalg.solve(np.eye(2) - 0.5 * A, np.eye(2) + 0.5 * A)
    np.testing.assert_allclose(traj.jacobians[-1], np.linalg.matrix_power(C, 64), atol=1e-12)


def test_inverse_flow_round_trip(rng):
    sys = catalog.system("pendulum")
    path = sample_path(TimeGrid(1.0, 64), 1, seed=8)
    z0 = rng.uniform(-2, 2, (100, 2))
    inc = np.broadcast_to(path.increments, (100,) + path.increments.shape)
    fwd = run_batch(sys, z0, inc, path.grid.t_mid(np.arange(64)))
    back = np.array([inverse_flow_point(sys, fwd.final[b], path, 64).as_array() for b in range(100)])
    assert np.max(np.abs(back - z0)) <= 1e-9


def test_inverse_of_zero_path_is_identity():
    sys = catalog.system("pendulum")
    path = sample_path(TimeGrid(1.0, 8), 1, seed=0)
    assert np.array_equal(inverse_flow_point(sys, [0.1, 0.2], path, 0).as_array(), [0.1, 0.2])
    zero = type(path)(path.grid, np.zeros_like(path.increments))
    np.testing.assert_allclose(inverse_flow_point(sys, [0.1, 0.2], zero, 8).as_array(), [0.1, 0.2], atol=1e-15)


def test_inverse_translation():
    path = sample_path(TimeGrid(1.0, 32), 1, seed=2)
    z = inverse_flow_point(catalog.system("translation"), [1.0, 0.5], path, 32)
    assert z.q[0] == pytest.approx(1.0 - path.brownian[-1, 0], abs=1e-13)


def test_batch_composition_invariance(rng):
    """A member's result does not depend on which members share its batch."""
    sys = catalog.system("pendulum")
    g = TimeGrid(1.0, 64)
    paths = [sample_path(g, 1, seed=1, path_index=m) for m in range(6)]
    z0 = rng.uniform(-1, 1, (6, 2))
    inc = np.stack([p.increments for p in paths])
    t_mids = g.t_mid(np.arange(64))
    full = run_batch(sys, z0, inc, t_mids, with_jacobian=True, with_action=True)
    for b in range(6):
        one = run_batch(sys, z0[b:b + 1], inc[b:b + 1], t_mids, with_jacobian=True, with_action=True)
        assert one.final.tobytes() == full.final[b:b + 1].tobytes()
        assert one.jacobian.tobytes() == full.jacobian[b:b + 1].tobytes()
        assert one.action.tobytes() == full.action[b:b + 1].tobytes()


def test_dimension_checks():
    path = sample_path(TimeGrid(1.0, 8), 2, seed=0)
    with pytest.raises(DimensionError):
        integrate_flow(catalog.system("pendulum"), [0.0, 0.0], path)


def test_euler_heun_flag_differs_but_runs():
    path = sample_path(TimeGrid(1.0, 64), 1, seed=0)
    a = integrate_flow(catalog.system("pendulum"), [0.5, 0.0], path)
    b = integrate_flow(catalog.system("pendulum"), [0.5, 0.0], path, SchemeConfig(scheme="euler-heun"))
    assert 0 < np.max(np.abs(a.states[-1] - b.states[-1])) < 0.05


def test_trajectory_csv(tmp_path):
    path = sample_path(TimeGrid(1.0, 4), 1, seed=0)
    traj = integrate_flow(catalog.system("pendulum"), [0.5, 0.0], path, with_jacobian=True)
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,t_k,q1,p1,defect_k"
    assert len(lines) == 6


def test_strong_convergence_order():
    """Endpoint error vs a 2^14-step reference on bridge-refined paths decays at order about 1."""
    sys = catalog.system("pendulum")
    P = 4
    base = [sample_path(TimeGrid(1.0, 2 ** 7), 1, seed=21, path_index=m) for m in range(P)]
    levels = {2 ** 7: base}
    cur = base
    for K in [2 ** k for k in range(8, 15)]:
        cur = [refine(p) for p in cur]
        levels[K] = cur
    z0 = np.tile([0.8, 0.3], (P, 1))

    def endpoint(paths):
        g = paths[0].grid
        inc = np.stack([p.increments for p in paths])
        return run_batch(sys, z0, inc, g.t_mid(np.arange(g.steps))).final

    ref = endpoint(levels[2 ** 14])
    Ks = [2 ** k for k in range(7, 12)]
    errs = [np.mean(np.max(np.abs(endpoint(levels[K]) - ref), axis=1)) for K in Ks]
    slope = -np.polyfit(np.log2(Ks), np.log2(errs), 1)[0]
    assert slope >= 0.9
