"""Dense matrix and ODE kernels shared by the solvers.

Everything here is a pure function of its inputs. Matrices are plain
``numpy.ndarray`` objects of dtype float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class DimensionError(ValueError):
    pass


class BlowUpError(ArithmeticError):
    """Non-finite values appeared while integrating on a grid."""

    def __init__(self, message: str, node: int, time: float):
        super().__init__(message)
        self.node = node
        self.time = time


class IllConditionedError(np.linalg.LinAlgError):
    def __init__(self, message: str, cond: float):
        super().__init__(message)
        self.cond = cond


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-d float array (scalars become 1x1)."""
    a = np.array(m, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-d, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 = tau_0 < ... < tau_n = t1``."""

    t1: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if self.n_steps < 2:
            raise ValueError("n_steps must be >= 2")
        if not self.t1 > self.t0:
            raise ValueError("t1 must exceed t0")

    @property
    def h(self) -> float:
        return (self.t1 - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        n = self.n_steps
        return self.t0 + (self.t1 - self.t0) * (np.arange(n + 1) / n)

    def __len__(self) -> int:
        return self.n_steps + 1


@dataclass
class GriddedTrajectory:
    """Values of a matrix-valued function at every node of a grid.

    ``values`` has shape ``(len(grid), *shape)``.
    """

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != len(self.grid):
            raise DimensionError(
                f"{self.values.shape[0]} values for a grid of {len(self.grid)} nodes")

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __getitem__(self, i):
        return self.values[i]

    def __len__(self) -> int:
        return self.values.shape[0]


# Pade approximant degrees and the 1-norm bounds below which each one is
# accurate to double precision (Higham 2005, Table 10.2).
_PADE_THETA = {
    3: 1.495585217958292e-2,
    5: 2.539398330063230e-1,
    7: 9.504178996162932e-1,
    9: 2.097847961257068e0,
    13: 5.371920351148152e0,
}


def _pade_coeffs(m: int) -> list[float]:
    return [
        float(math.factorial(2 * m - j) // (math.factorial(j) * math.factorial(m - j)))
        for j in range(m + 1)
    ]


def _pade(a: np.ndarray, m: int) -> np.ndarray:
    b = _pade_coeffs(m)
    n = a.shape[0]
    eye = np.eye(n)
    a2 = a @ a
    if m == 13:
        a4 = a2 @ a2
        a6 = a4 @ a2
        u = a @ (a6 @ (b[13] * a6 + b[11] * a4 + b[9] * a2)
                 + b[7] * a6 + b[5] * a4 + b[3] * a2 + b[1] * eye)
        v = (a6 @ (b[12] * a6 + b[10] * a4 + b[8] * a2)
             + b[6] * a6 + b[4] * a4 + b[2] * a2 + b[0] * eye)
    else:
        powers = [eye, a2]
        for _ in range(2, m // 2 + 1):
            powers.append(powers[-1] @ a2)
        u = a @ sum(b[2 * k + 1] * powers[k] for k in range(m // 2 + 1))
        v = sum(b[2 * k] * powers[k] for k in range(m // 2 + 1))
    return np.linalg.solve(v - u, v + u)


def expm(m) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a diagonal Pade kernel.

    The Pade degree is the smallest one whose 1-norm bound covers the input;
    beyond the degree-13 bound the matrix is scaled by ``2**-s`` and the
    result squared ``s`` times.
    """
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expm needs a square matrix, got shape {a.shape}")
    if a.size == 0:
        return a.copy()
    norm = np.linalg.norm(a, 1)
    for deg in (3, 5, 7, 9):
        if norm <= _PADE_THETA[deg]:
            return _pade(a, deg)
    s = max(0, math.ceil(math.log2(norm / _PADE_THETA[13])))
    r = _pade(a / 2.0 ** s, 13)
    for _ in range(s):
        r = r @ r
    return r


def rk4_backward(derivative: Callable[[float, np.ndarray], np.ndarray],
                 terminal, grid: TimeGrid) -> GriddedTrajectory:
    """Classical RK4 run from ``grid.t1`` down to ``grid.t0``.

    ``derivative(t, V)`` must return dV/dtau where ``tau = t1 - t`` is the
    time-to-go, i.e. the negative of the forward time derivative. With this
    convention ``derivative = lambda t, V: A @ V`` gives
    ``V(t) = expm(A (t1 - t)) @ terminal``.
    """
    v = np.array(terminal, dtype=float)
    nodes = grid.nodes
    h = grid.h
    out = np.empty((len(nodes),) + v.shape)
    n = grid.n_steps
    out[n] = v
    for i in range(n, 0, -1):
        t = nodes[i]
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = derivative(t, v)
            k2 = derivative(t - 0.5 * h, v + 0.5 * h * k1)
            k3 = derivative(t - 0.5 * h, v + 0.5 * h * k2)
            k4 = derivative(t - h, v + h * k3)
            v = v + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(v)):
            raise BlowUpError(
                f"non-finite value at node {i - 1} (t={nodes[i - 1]:.6g})",
                node=i - 1, time=float(nodes[i - 1]))
        out[i - 1] = v
    return GriddedTrajectory(grid, out)


def invert_checked(m, cond_threshold: float = 1e12) -> np.ndarray:
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cannot invert shape {a.shape}")
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > cond_threshold:
        raise IllConditionedError(
            f"condition number {cond:.3g} exceeds {cond_threshold:.3g}", cond=float(cond))
    return np.linalg.inv(a)


def interp_eval(traj: GriddedTrajectory, t: float) -> np.ndarray:
    """Piecewise-linear interpolation; exact at the nodes."""
    g = traj.grid
    if not g.t0 <= t <= g.t1:
        raise ValueError(f"t={t} outside [{g.t0}, {g.t1}]")
    x = (t - g.t0) / g.h
    i = min(int(math.floor(x)), g.n_steps - 1)
    w = x - i
    if w == 0.0:
        return traj.values[i].copy()
    if w == 1.0:
        return traj.values[i + 1].copy()
    return (1.0 - w) * traj.values[i] + w * traj.values[i + 1]


def central_difference(traj: GriddedTrajectory) -> np.ndarray:
    """Forward-time derivative at interior nodes, shape ``(n-1, *shape)``."""
    v = traj.values
    return (v[2:] - v[:-2]) / (2.0 * traj.grid.h)
