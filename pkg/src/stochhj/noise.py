"""Driving noise X = (t, B^1..B^r) on a uniform grid.

Randomness comes from numpy's counter-based Philox generator keyed by
``(seed, path_index, channel)`` (plus the refinement level for bridge
midpoints), so a path never depends on how many other paths are drawn, in
which order, or on how many threads draw them.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError

_BRIDGE_TAG = 0x42524447  # separates bridge streams from base streams
# Brownian increments are snapped to multiples of 2^-44 so that bridge halves
# re-sum to their parent exactly (exact for magnitudes below 2^9).
_QUANTUM = 2.0 ** 44


def _snap(x: np.ndarray) -> np.ndarray:
    return np.round(x * _QUANTUM) / _QUANTUM


@dataclass(frozen=True)
class TimeGrid:
    t_end: float
    steps: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a grid needs at least one step")
        if not self.t_end > 0.0:
            raise ValueError("t_end must be positive")

    @property
    def dt(self) -> float:
        return self.t_end / self.steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def t(self, k) -> float:
        return k * self.dt

    def t_mid(self, k) -> float:
        return (k + 0.5) * self.dt

    def refined(self) -> "TimeGrid":
        return TimeGrid(self.t_end, 2 * self.steps)


@dataclass(frozen=True)
class NoisePath:
    """Increments ``dX[k, j]`` for step ``k`` and channel ``j``; channel 0 is time."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int = 0
    path_index: int = 0
    level: int = 0

    def __post_init__(self):
        inc = np.asarray(self.increments, dtype=float)
        if inc.ndim != 2 or inc.shape[0] != self.grid.steps or inc.shape[1] < 1:
            raise DimensionError(f"increments must have shape (K, r+1), got {inc.shape}")
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @property
    def r(self) -> int:
        return self.increments.shape[1] - 1

    @property
    def brownian(self) -> np.ndarray:
        """Brownian values at the nodes, shape ``(K+1, r)``."""
        out = np.zeros((self.grid.steps + 1, self.r))
        np.cumsum(self.increments[:, 1:], axis=0, out=out[1:])
        return out

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "t_k"] + [f"dX{j}" for j in range(self.r + 1)])
            for k in range(self.grid.steps):
                w.writerow([k, repr(self.grid.t(k))] + [repr(float(x)) for x in self.increments[k]])


def _normals(seed: int, *key: int, size: int) -> np.ndarray:
    ss = np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *key])
    return np.random.Generator(np.random.Philox(ss)).standard_normal(size)


def sample_path(grid: TimeGrid, r: int, seed: int, path_index: int = 0) -> NoisePath:
    if r < 0:
        raise ValueError("channel count must be non-negative")
    inc = np.empty((grid.steps, r + 1))
    inc[:, 0] = grid.dt
    scale = np.sqrt(grid.dt)
    for j in range(1, r + 1):
        inc[:, j] = _snap(scale * _normals(seed, path_index, j, size=grid.steps))
    return NoisePath(grid, inc, seed, path_index, 0)


def sample_paths(grid: TimeGrid, r: int, seed: int, indices) -> list[NoisePath]:
    return [sample_path(grid, r, seed, int(i)) for i in indices]


def refine(path: NoisePath) -> NoisePath:
    """Brownian-bridge midpoint insertion: each step splits into two halves.

    The first half is ``N(parent/2, dt/4)`` given the parent increment; the
    second half is the parent minus the first, so pairs always re-sum to the
    parent exactly.
    """
    grid = path.grid
    K, r = grid.steps, path.r
    inc = path.increments
    fine = np.empty((2 * K, r + 1))
    fine[:, 0] = grid.dt / 2
    std = 0.5 * np.sqrt(grid.dt)
    for j in range(1, r + 1):
        xi = _normals(path.seed, path.path_index, j, _BRIDGE_TAG, path.level + 1, size=K)
        first = _snap(0.5 * inc[:, j] + std * xi)
        fine[0::2, j] = first
        fine[1::2, j] = inc[:, j] - first
    return NoisePath(grid.refined(), fine, path.seed, path.path_index, path.level + 1)


def coarsen(path: NoisePath) -> np.ndarray:
    """Pairwise sums of increments; inverts :func:`refine` on the Brownian channels."""
    inc = path.increments
    if inc.shape[0] % 2:
        raise DimensionError("cannot coarsen an odd number of steps")
    return inc[0::2] + inc[1::2]


def stratonovich_sum(values, path: NoisePath) -> float:
    """``sum_{j,k} values[k, j] * dX[k, j]`` with values taken at step midpoints."""
    values = np.asarray(values, dtype=float)
    if values.shape != path.increments.shape:
        raise DimensionError(f"values of shape {values.shape} do not match increments {path.increments.shape}")
    return float(np.sum(values * path.increments))


def stack_increments(paths: list[NoisePath]) -> np.ndarray:
    return np.stack([p.increments for p in paths])
