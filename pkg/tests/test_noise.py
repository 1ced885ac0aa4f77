import numpy as np
import pytest
from scipy import stats

from stochhj.errors import DimensionError
from stochhj.noise import (NoisePath, TimeGrid, coarsen, refine, sample_path, sample_paths,
                           stratonovich_sum)


def test_grid_basics():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert g.t(3) == 0.75
    assert g.times[-1] == 2.0
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_time_channel_is_deterministic():
    p = sample_path(TimeGrid(1.0, 16), 2, seed=5)
    assert np.all(p.increments[:, 0] == 1.0 / 16)
    assert p.r == 2


def test_pure_time_path_gives_riemann_sum():
    p = sample_path(TimeGrid(1.5, 10), 0, seed=1)
    assert p.r == 0
    assert stratonovich_sum(np.ones((10, 1)), p) == pytest.approx(1.5)


def test_zero_values_integrate_to_zero():
    p = sample_path(TimeGrid(1.0, 10), 1, seed=1)
    assert stratonovich_sum(np.zeros((10, 2)), p) == 0.0


def test_stratonovich_shape_mismatch():
    p = sample_path(TimeGrid(1.0, 10), 1, seed=1)
    with pytest.raises(DimensionError):
        stratonovich_sum(np.zeros((10, 1)), p)


@pytest.mark.parametrize("K", [2 ** 10, 2 ** 11, 2 ** 12, 2 ** 13])
def test_stratonovich_integral_of_b_db(K):
    p = sample_path(TimeGrid(1.0, K), 1, seed=9)
    B = p.brownian[:, 0]
    values = np.zeros((K, 2))
    values[:, 1] = 0.5 * (B[:-1] + B[1:])
    # midpoint quadrature telescopes: sum (B_{k+1}^2 - B_k^2)/2 = B_T^2/2
    assert stratonovich_sum(values, p) == pytest.approx(0.5 * B[-1] ** 2, abs=1e-12)


def test_determinism_and_independence_of_order():
    g = TimeGrid(1.0, 32)
    a = sample_path(g, 2, seed=123, path_index=7)
    batch = sample_paths(g, 2, seed=123, indices=[9, 7, 3])
    assert np.array_equal(a.increments, batch[1].increments)
    assert a.increments.tobytes() == sample_path(g, 2, seed=123, path_index=7).increments.tobytes()
    assert not np.array_equal(a.increments, sample_path(g, 2, seed=124, path_index=7).increments)
    assert not np.array_equal(batch[0].increments[:, 1], batch[0].increments[:, 2])


def test_terminal_variance():
    g = TimeGrid(2.0, 4)
    B = np.array([p.brownian[-1, 0] for p in sample_paths(g, 1, seed=2, indices=range(10_000))])
    assert abs(B.var(ddof=1) - 2.0) <= 4 * np.sqrt(2 / 10_000) * 2.0


def test_refine_resums_exactly():
    p = sample_path(TimeGrid(1.0, 64), 2, seed=4)
    fine = refine(refine(p))
    assert fine.grid.steps == 256
    assert np.array_equal(coarsen(fine), refine(p).increments)
    assert np.array_equal(coarsen(refine(p)), p.increments)


def test_refine_zero_noise_halves_dt():
    p = sample_path(TimeGrid(1.0, 10), 0, seed=0)
    fine = refine(p)
    assert fine.grid.dt == pytest.approx(0.05)
    assert np.all(fine.increments[:, 0] == 0.05)


def test_refine_is_deterministic():
    p = sample_path(TimeGrid(1.0, 8), 1, seed=4)
    assert np.array_equal(refine(p).increments, refine(p).increments)


def test_refined_midpoints_follow_bridge_law():
    K = 10_000
    g = TimeGrid(1.0, K)
    p = sample_path(g, 1, seed=17)
    first = refine(p).increments[0::2, 1]
    z = (first - 0.5 * p.increments[:, 1]) / (0.5 * np.sqrt(g.dt))
    assert stats.kstest(z, "norm").pvalue > 1e-3


def test_coarsen_odd_raises():
    with pytest.raises(DimensionError):
        coarsen(sample_path(TimeGrid(1.0, 3), 1, seed=0))


def test_increments_are_read_only():
    p = sample_path(TimeGrid(1.0, 4), 1, seed=0)
    with pytest.raises(ValueError):
        p.increments[0, 1] = 1.0


def test_bad_increment_shape():
    with pytest.raises(DimensionError):
        NoisePath(TimeGrid(1.0, 4), np.zeros((3, 2)))


def test_path_csv(tmp_path):
    p = sample_path(TimeGrid(1.0, 4), 1, seed=0)
    p.to_csv(tmp_path / "path.csv")
    lines = (tmp_path / "path.csv").read_text().splitlines()
    assert lines[0] == "k,t_k,dX0,dX1"
    assert len(lines) == 5
