import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochhj import catalog
from stochhj.canonical import (GeneratingFunction, apply_psi, apply_psi_inverse, bracket_conditions,
                               equilibrium_check, j_inverse, transform_hamiltonians)
from stochhj.dsl import GENERATING, field
from stochhj.errors import DimensionError, TransformError
from stochhj.geometry import HamiltonianSystem, PhaseState
from stochhj.noise import TimeGrid, sample_path

finite = st.floats(-3, 3, allow_nan=False)


@pytest.mark.parametrize("name,t,z,expected", [
    ("exchange", 0.5, [0.3, -1.2], [-1.2, -0.3]),
    ("free_flow", 0.5, [0.3, -1.2], [0.3 + 0.6, -1.2]),
    ("drift_shift", 0.25, [0.3, -1.2], [-1.2 + 0.25, -0.3]),
])
def test_psi_examples(name, t, z, expected):
    out = apply_psi(catalog.generating_function(name), t, PhaseState.from_array(np.array(z)))
    assert isinstance(out, PhaseState)
    np.testing.assert_allclose(out.as_array(), expected, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(finite, finite, st.floats(0.1, 2.0))
def test_psi_inverse_round_trip(q, p, t):
    gf = catalog.generating_function("free_flow")
    z = np.array([q, p])
    back = apply_psi_inverse(gf, t, apply_psi(gf, t, z))
    np.testing.assert_allclose(back, z, atol=1e-10)


def test_j_inverse():
    z = j_inverse(catalog.generating_function("exchange"), 0.0, [0.4], [2.0])
    assert z.q.tolist() == [0.4] and z.p.tolist() == [2.0]


def test_generating_space_required():
    with pytest.raises(ValueError):
        GeneratingFunction(field("q1*p1"))


def test_twist_failure():
    gf = GeneratingFunction(field("a1 + b1^2", 1, GENERATING))
    with pytest.raises(TransformError):
        apply_psi(gf, 0.5, np.array([0.1, 0.2]))


def test_transformed_hamiltonians_exchange():
    ts = transform_hamiltonians(catalog.generating_function("exchange"), catalog.system("free_particle"))
    assert ts.independent(1e-12)
    val, dq2, _ = ts.K[0].evaluate(0.5, np.array([[0.7]]), np.array([[1.5]]))
    assert val[0] == pytest.approx(1.125)
    assert dq2[0, 0] == pytest.approx(1.5)


def test_transformed_hamiltonians_detect_q1_dependence():
    ts = transform_hamiltonians(catalog.generating_function("exchange"), catalog.system("pendulum"))
    assert not ts.independent()
    assert ts.defects[1] == 0.0 and ts.defects[0] > 0.1


def test_dimension_mismatch():
    gf = GeneratingFunction(field("a1*b1 + a2*b2", 2, GENERATING))
    with pytest.raises(DimensionError):
        transform_hamiltonians(gf, catalog.system("pendulum"))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_exchange_equilibrium(seed, tmp_path):
    path = sample_path(TimeGrid(1.0, 64), 1, seed=seed)
    rep = equilibrium_check(catalog.generating_function("exchange"), catalog.system("free_particle"),
                            [0.2, -0.5], path)
    assert rep.q_drift <= 1e-12
    assert rep.discrepancy <= 1e-10
    rep.to_csv(tmp_path / "eq.csv")
    assert (tmp_path / "eq.csv").read_text().splitlines()[0] == "k,t_k,Q1,P1,Qhat1,Phat1"


def test_equilibrium_refuses_dependent_hamiltonians():
    path = sample_path(TimeGrid(1.0, 8), 1, seed=0)
    with pytest.raises(TransformError):
        equilibrium_check(catalog.generating_function("exchange"), catalog.system("pendulum"), [0.2, 0.1], path)


def _probe():
    axis = np.linspace(-1, 1, 5)
    return np.array([[a, b] for a in axis for b in axis])


def test_brackets_pass_exchange():
    rep = bracket_conditions(catalog.system("free_particle"), None, _probe())
    assert rep.passed and rep.verdict == "PASS"


def test_brackets_pass_with_time_term():
    gf = catalog.generating_function("drift_shift")
    sys = HamiltonianSystem([field("q1"), field("p1")])
    ts = transform_hamiltonians(gf, sys)
    rep = bracket_conditions(sys, ts, _probe(), times=(0.25, 0.5, 1.0), gf=gf)
    assert rep.drift_defect <= 1e-12 and rep.passed
    assert ts.independent()
    # without the time term the drift condition fails
    assert not bracket_conditions(sys, None, _probe()).passed


def test_brackets_negative_control():
    sys = HamiltonianSystem([field("0"), field("q1"), field("p1")])
    rep = bracket_conditions(sys, None, _probe())
    assert rep.involution_defect == pytest.approx(1.0)
    assert rep.verdict == "FAIL"
