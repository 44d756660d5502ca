"""Scalar example: one major player steering against a mean field it does not pay for.

Dynamics (all scalars)::

    dX0 = (a Xbar + b u0) dt + D0 dW0,     dXi = c X0 dt + D dWi,

major cost ``E int q X0^2 + u0^2 dt``, minor cost ``E int ui^2 dt`` (so every
minor's best response is 0). Two limit schemes are compared:

* the *new* scheme, whose adjoint also responds to the major's influence on
  the mean field, giving the 2x2 Riccati system below;
* the *old* scheme, which optimizes the major against a frozen mean-field
  flow and imposes consistency afterwards, giving the ODEs for ``(T1, T2, tau)``.

Only the new scheme is the limit of the finite-player equilibria.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .model import AssembledSystem, LqgModel, zero_model
from .noise import NoiseSource
from .numerics import GriddedTrajectory, TimeGrid, rk4_backward
from .riccati import solve_riccati_ode, solve_riccati_propagator
from .sim import map_paths, mc_estimate, trapezoid_weights

COINCIDE_TOL = 1e-10
RATIO_RTOL = 1e-12  # round-off allowance; the ratio equals the bound when K_hat = 0


@dataclass(frozen=True)
class ExampleParams:
    a: float = 1.0
    b: float = 1.0
    c: float = 1.0
    q: float = 1.0
    D0: float = 1.0
    D: float = 1.0
    T: float = 1.0
    x0_major: float = 1.0
    x0_minor: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v):
                raise ValueError(f"{k} must be finite")
        if self.q < 0:
            raise ValueError("q must be nonnegative")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ExampleParams":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown example field(s): {', '.join(sorted(unknown))}")
        return cls(**{k: float(v) for k, v in data.items()})

    def to_dict(self) -> dict:
        return asdict(self)


def embedded_model(p: ExampleParams) -> LqgModel:
    """The example written as a general model (minors have no control authority)."""
    return zero_model(A0=[[0.0]], B0=[[p.b]], F0=[[p.a]], D0=[[p.D0]],
                      G=[[p.c]], D=[[p.D]], Q0=[[p.q]], R0=[[1.0]], R=[[1.0]],
                      x0_major=[p.x0_major], x0_minor=[p.x0_minor], T=p.T)


def new_scheme_system(p: ExampleParams) -> AssembledSystem:
    return AssembledSystem.from_blocks(
        Abb=[[0.0, p.a], [p.c, 0.0]],
        Bbb=[[-0.5 * p.b ** 2, 0.0], [0.0, 0.0]],
        Ahat=[[2 * p.q, 0.0], [0.0, 0.0]],
        Bhat=[[0.0, p.c], [p.a, 0.0]],
    )


@dataclass
class SchemeSolution:
    """Deterministic part of a scheme.

    ``coeffs[n] = (c0, c1, c2)`` gives the control ``u0 = c0 X0 + c1 Xbar + c2``
    at node ``n``. ``S2`` is set for the new scheme, ``Told`` (columns T1, T2,
    tau) for the old one.
    """

    params: ExampleParams
    grid: TimeGrid
    scheme: str
    coeffs: np.ndarray
    S2: GriddedTrajectory | None = None
    Told: GriddedTrajectory | None = None


def _check_grid(p: ExampleParams, grid: TimeGrid):
    if grid.t0 != 0.0 or abs(grid.t1 - p.T) > 1e-12 * max(1.0, p.T):
        raise ValueError(f"grid [{grid.t0}, {grid.t1}] does not span [0, T={p.T}]")


def solve_new_scheme(p: ExampleParams, grid: TimeGrid,
                     method: str = "propagator") -> SchemeSolution:
    _check_grid(p, grid)
    sys = new_scheme_system(p)
    if method == "propagator":
        S2 = solve_riccati_propagator(sys, grid)
    elif method == "ode":
        S2 = solve_riccati_ode(sys, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    coeffs = np.zeros((len(grid), 3))
    coeffs[:, 0] = -0.5 * p.b * S2.values[:, 0, 0]
    coeffs[:, 1] = -0.5 * p.b * S2.values[:, 0, 1]
    return SchemeSolution(p, grid, "new", coeffs, S2=S2)


def old_scheme_field(p: ExampleParams):
    """d/dtau of (T1, T2, tau) with tau the time-to-go."""
    k = 0.5 * p.b ** 2

    def f(t, v):
        T1, T2, tau = v
        return -np.array([k * T1 * T1 - p.c * T2 - 2 * p.q,
                          -p.a * T1 + k * T1 * T2,
                          k * T1 * tau])
    return f


def solve_old_scheme(p: ExampleParams, grid: TimeGrid) -> SchemeSolution:
    _check_grid(p, grid)
    Told = rk4_backward(old_scheme_field(p), np.zeros(3), grid)
    coeffs = -0.5 * p.b * Told.values
    return SchemeSolution(p, grid, "old", coeffs, Told=Told)


def old_scheme_residual(sol: SchemeSolution) -> np.ndarray:
    """Central-difference residual of the (T1, T2, tau) ODEs at interior nodes."""
    f = old_scheme_field(sol.params)
    v, h = sol.Told.values, sol.grid.h
    dv = (v[2:] - v[:-2]) / (2 * h)
    return np.array([np.abs(dv[i] + f(0.0, v[i + 1])).max() for i in range(len(dv))])


def scalar_riccati_closed_form(p: ExampleParams, t: np.ndarray) -> np.ndarray:
    """``S00`` when ``a = c = 0``: ``2 sqrt(q)/|b| tanh(|b| sqrt(q) (T - t))``."""
    t = np.asarray(t, dtype=float)
    if p.b == 0:
        return 2 * p.q * (p.T - t)
    return 2 * math.sqrt(p.q) / abs(p.b) * np.tanh(abs(p.b) * math.sqrt(p.q) * (p.T - t))


def scheme_difference(p: ExampleParams, grid: TimeGrid) -> dict:
    """Largest gap between the two schemes' feedback coefficients on ``X0`` and ``Xbar``."""
    new, old = solve_new_scheme(p, grid), solve_old_scheme(p, grid)
    gap = np.abs(new.coeffs[:, :2] - old.coeffs[:, :2]).max(axis=1)
    g = float(gap.max())
    return {"max_coeff_gap": g, "gap_curve": GriddedTrajectory(grid, gap),
            "gap_x0": float(np.abs(new.coeffs[:, 0] - old.coeffs[:, 0]).max()),
            "gap_xbar": float(np.abs(new.coeffs[:, 1] - old.coeffs[:, 1]).max()),
            "schemes_coincide": g <= COINCIDE_TOL, "new": new, "old": old}


def coefficient_table(diff: dict) -> tuple[list[str], list[list[float]]]:
    new, old = diff["new"], diff["old"]
    t = new.grid.nodes
    S, T = new.S2.values, old.Told.values
    rows = [[t[n], S[n, 0, 0], S[n, 0, 1], T[n, 0], T[n, 1], diff["gap_curve"].values[n]]
            for n in range(len(t))]
    return ["t", "S00", "S01", "T1", "T2", "gap"], rows


# -- Monte Carlo --------------------------------------------------------------

@dataclass
class SchemePaths:
    """``X0``, ``Xbar`` and ``u0`` with shape ``(paths, nodes)``."""

    grid: TimeGrid
    X0: np.ndarray
    Xbar: np.ndarray
    u0: np.ndarray
    sumW: np.ndarray | None = None


def _run(p, grid, coeffs, dW0, agg):
    """Euler scheme for ``(X0, mean)``; ``agg`` is ``(D/N) * sum_i dW^i`` or None."""
    P, n = dW0.shape[0], grid.n_steps
    h = grid.h
    X0 = np.empty((P, n + 1))
    Xb = np.empty((P, n + 1))
    u = np.empty((P, n + 1))
    X0[:, 0], Xb[:, 0] = p.x0_major, p.x0_minor
    for k in range(n + 1):
        c0, c1, c2 = coeffs[k]
        u[:, k] = c0 * X0[:, k] + c1 * Xb[:, k] + c2
        if k == n:
            break
        X0[:, k + 1] = X0[:, k] + h * (p.a * Xb[:, k] + p.b * u[:, k]) + p.D0 * dW0[:, k]
        Xb[:, k + 1] = Xb[:, k] + h * (p.c * X0[:, k])
        if agg is not None:
            Xb[:, k + 1] = Xb[:, k + 1] + agg[:, k]
    return X0, Xb, u


def _minor_sum(noise, paths, N, grid):
    """``sum_i dW^i`` per path and step, summed over players in index order."""
    acc = np.zeros((len(paths), grid.n_steps))
    for i in range(1, N + 1):
        acc = acc + noise.increments(paths, [i], grid, 1)[:, 0, :, 0]
    return acc


def simulate_scheme(sol: SchemeSolution, noise: NoiseSource, n_paths: int) -> SchemePaths:
    def job(r):
        dW0 = noise.major(r, sol.grid, 1)[:, :, 0]
        return _run(sol.params, sol.grid, sol.coeffs, dW0, None)
    parts = map_paths(job, n_paths, 4096)
    X0, Xb, u = (np.concatenate([q[i] for q in parts]) for i in range(3))
    return SchemePaths(sol.grid, X0, Xb, u)


def solve_finite_aggregate(p: ExampleParams, N: int, grid: TimeGrid, noise: NoiseSource,
                           n_paths: int, new: SchemeSolution | None = None) -> SchemePaths:
    """Aggregate finite-player equilibrium: ``(X0^N, X^N)`` and ``u0^N``.

    ``X^N`` carries ``(D/N) sum_i dW^i`` built from the first ``N`` minor streams.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    new = new or solve_new_scheme(p, grid)

    def job(r):
        dW0 = noise.major(r, grid, 1)[:, :, 0]
        sw = _minor_sum(noise, r, N, grid)
        X0, Xb, u = _run(p, grid, new.coeffs, dW0, (p.D / N) * sw)
        return X0, Xb, u, sw
    parts = map_paths(job, n_paths, 4096)
    X0, Xb, u, sw = (np.concatenate([q[i] for q in parts]) for i in range(4))
    W = np.zeros((sw.shape[0], grid.n_steps + 1))
    W[:, 1:] = np.cumsum(sw, axis=1)
    return SchemePaths(grid, X0, Xb, u, sumW=W)


def k_hat(p: ExampleParams, new: SchemeSolution) -> float:
    """Lipschitz constant of the new scheme's closed-loop drift."""
    sup = max(np.linalg.norm(S, 2) for S in new.S2.values)
    return abs(p.a) + abs(p.c) + 0.5 * p.b ** 2 * sup


def verify_pnew(p: ExampleParams, N_list, grid: TimeGrid, noise: NoiseSource,
                n_paths: int, ratio_N: int | None = None) -> dict:
    """Couple finite aggregates with both schemes on the major noise.

    Per ``N``: ``E sup_t (|X0^N - X0| + |X^N - Xbar|)^2``, the pathwise
    Gronwall ratio, and ``E int |u^N - u|^2 dt`` against both schemes.
    """
    from .experiments import fit_rate

    N_list = [int(n) for n in N_list]
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError("N_list must be increasing")
    new, old = solve_new_scheme(p, grid), solve_old_scheme(p, grid)
    lim_new = simulate_scheme(new, noise, n_paths)
    lim_old = simulate_scheme(old, noise, n_paths)
    w = trapezoid_weights(grid)
    bound = math.exp(k_hat(p, new) * p.T)
    rows = []
    for N in N_list:
        fin = solve_finite_aggregate(p, N, grid, noise, n_paths, new)
        dev = np.abs(fin.X0 - lim_new.X0) + np.abs(fin.Xbar - lim_new.Xbar)
        sup = dev.max(axis=1)
        scale = (p.D / N) * np.abs(fin.sumW).max(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(sup == 0, 0.0, sup / scale)
        e_state = mc_estimate(sup ** 2)
        e_new = mc_estimate(((fin.u0 - lim_new.u0) ** 2) @ w)
        e_old = mc_estimate(((fin.u0 - lim_old.u0) ** 2) @ w)
        rows.append({"N": N, "err_state": e_state.value, "err_state_se": e_state.stderr,
                     "err_control_new": e_new.value, "err_control_new_se": e_new.stderr,
                     "err_control_old": e_old.value, "err_control_old_se": e_old.stderr,
                     "max_ratio": float(ratio.max()),
                     "ratio_ok_fraction": float(np.mean(ratio <= bound * (1 + RATIO_RTOL)))})
    out = {"bound": bound, "K_hat": k_hat(p, new), "rows": rows}
    errs = [r["err_state"] for r in rows]
    if len(rows) >= 3 and all(e > 0 for e in errs):
        out["fit"] = fit_rate(N_list, errs)
    else:
        out["fit"] = None
    return out
