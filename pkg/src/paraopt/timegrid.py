"""Time grids for the horizon [0, T].

Three vertex placements are supported: uniform, exponentially graded
(equal mass of e^{-ct} per interval, so the grid is fine near t = 0),
and piecewise uniform with a split point tau.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Ordered vertices 0 = t_0 < ... < t_{N-1} = T with a scheme tag."""

    vertices: np.ndarray
    scheme: str

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ValueError("need at least two time vertices")
        if v[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(v) <= 0):
            raise ValueError("time vertices must be strictly increasing")
        object.__setattr__(self, "vertices", v)

    @property
    def N(self) -> int:
        return self.vertices.size

    @property
    def T(self) -> float:
        return float(self.vertices[-1])

    @property
    def dt(self) -> np.ndarray:
        """Interval lengths, size N-1."""
        return np.diff(self.vertices)


def uniform_grid(T: float, N: int) -> TimeGrid:
    if T <= 0:
        raise ValueError(f"need T > 0, got {T}")
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    return TimeGrid(np.linspace(0.0, T, N), "uniform")


def exponential_grid(T: float, N: int, c: float) -> TimeGrid:
    """Vertices with equal mass of e^{-ct} per interval.

    With I = (1 - e^{-cT})/c each of the N-1 intervals carries mass
    I/(N-1); the recursion t_{i+1} = -(1/c) log(e^{-c t_i} - c I/(N-1))
    is exact, and the last vertex is snapped to T to remove the
    accumulated rounding.
    """
    if T <= 0:
        raise ValueError(f"need T > 0, got {T}")
    if N < 2:
        raise ValueError(f"need N >= 2, got {N}")
    if c <= 0:
        raise ValueError(f"need c > 0, got {c} (use uniform_grid for c -> 0)")
    I = (1.0 - np.exp(-c * T)) / c
    step = c * I / (N - 1)
    t = np.empty(N)
    t[0] = 0.0
    for i in range(N - 1):
        t[i + 1] = -np.log(np.exp(-c * t[i]) - step) / c
    t[-1] = T
    return TimeGrid(t, "exponential")


def piecewise_uniform_grid(T: float, tau: float, N: int) -> TimeGrid:
    """N-1 intervals split between [0, tau] and [tau, T], each part uniform.

    The initial part gets ceil((N-1)/2) intervals; tau is always a vertex.
    """
    if not 0 < tau < T:
        raise ValueError(f"need 0 < tau < T, got tau={tau}, T={T}")
    if N < 3:
        raise ValueError(f"need N >= 3, got {N}")
    n1 = -(-(N - 1) // 2)
    n2 = (N - 1) - n1
    left = np.linspace(0.0, tau, n1 + 1)
    right = np.linspace(tau, T, n2 + 1)
    return TimeGrid(np.concatenate([left, right[1:]]), "pw_uniform")


def time_weights(grid: TimeGrid) -> np.ndarray:
    """Trapezoidal quadrature weights on the vertices; they sum to T."""
    dt = grid.dt
    w = np.zeros(grid.N)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    return w


def make_grid(scheme: str, T: float, N: int, c: float = 1.0, tau: float = 1.0) -> TimeGrid:
    """Dispatch on a scheme name used by configs and the MPC comparison."""
    if scheme == "uniform":
        return uniform_grid(T, N)
    if scheme == "exponential":
        return exponential_grid(T, N, c)
    if scheme == "pw_uniform":
        return piecewise_uniform_grid(T, tau, N)
    raise ValueError(f"unknown time grid scheme {scheme!r}")
