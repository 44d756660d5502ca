"""Decoupling of the equilibrium FBSDE.

The backward state is affine in the forward one, ``Y_t = S_t X_t + s_t``,
with ``S`` solving the (non-symmetric) matrix Riccati equation::

    dS/dt + S Abb + Bhat S + S Bbb S + Ahat = 0,   S_T = 0

and ``s`` the linear offset equation. The representative minor player's
adjoint is in turn affine in its own state, ``Y = K X + k``, where ``K``
solves a standard LQ Riccati equation and ``k = Ybar - K Xbar`` is adapted
to the major noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AssembledSystem, LqgModel, assemble_compact, check, control_weight
from .numerics import (BlowUpError, GriddedTrajectory, IllConditionedError, TimeGrid,
                       central_difference, expm, invert_checked, rk4_backward)


class RiccatiEscapeError(BlowUpError):
    pass


class AssumptionViolation(ArithmeticError):
    """The propagator block to be inverted is (numerically) singular at a node."""

    def __init__(self, message: str, node: int, time: float, cond: float):
        super().__init__(message)
        self.node = node
        self.time = time
        self.cond = cond


def riccati_field(sys: AssembledSystem):
    """dS/dtau for the time-to-go ``tau``, i.e. ``S Abb + Bhat S + S Bbb S + Ahat``."""
    Abb, Bbb, Ahat, Bhat = sys.Abb, sys.Bbb, sys.Ahat, sys.Bhat

    def f(t, S):
        return S @ Abb + Bhat @ S + S @ Bbb @ S + Ahat
    return f


def solve_riccati_ode(sys: AssembledSystem, grid: TimeGrid) -> GriddedTrajectory:
    try:
        return rk4_backward(riccati_field(sys), np.zeros((sys.ny, sys.nx)), grid)
    except BlowUpError as exc:
        raise RiccatiEscapeError(f"Riccati solution escapes: {exc}", exc.node, exc.time) from exc


def _gamma_blocks(sys: AssembledSystem, tau: float):
    psi = expm(sys.hamiltonian * tau)
    nx = sys.nx
    return psi[nx:, :nx], psi[nx:, nx:]


def solve_riccati_propagator(sys: AssembledSystem, grid: TimeGrid,
                             cond_threshold: float = 1e12) -> GriddedTrajectory:
    """``S_t = -(Gamma22_t)^{-1} Gamma21_t`` from the flow ``expm(H (T - t))``."""
    nodes = grid.nodes
    out = np.empty((len(nodes), sys.ny, sys.nx))
    for i, t in enumerate(nodes):
        g21, g22 = _gamma_blocks(sys, grid.t1 - t)
        try:
            inv = invert_checked(g22, cond_threshold)
        except IllConditionedError as exc:
            raise AssumptionViolation(
                f"Gamma22 not invertible at node {i} (t={t:.6g}), cond={exc.cond:.3g}",
                node=i, time=float(t), cond=exc.cond) from exc
        out[i] = -inv @ g21
    return GriddedTrajectory(grid, out)


@dataclass
class AprimeReport:
    """Scan of ``Gamma22`` over the grid.

    ``crossing`` is the first node after which ``det Gamma22`` changes sign,
    i.e. the block is singular somewhere between two nodes.
    """

    min_singular_value: float
    worst_node: int
    worst_time: float
    satisfied: bool
    crossing: int | None = None

    def to_dict(self) -> dict:
        return dict(min_singular_value=self.min_singular_value, worst_node=self.worst_node,
                    worst_time=self.worst_time, satisfied=self.satisfied,
                    crossing=self.crossing)


def check_assumption_Aprime(sys: AssembledSystem, grid: TimeGrid,
                            cond_threshold: float = 1e12) -> AprimeReport:
    sig = np.empty(len(grid))
    sign = np.empty(len(grid))
    for i, t in enumerate(grid.nodes):
        _, g22 = _gamma_blocks(sys, grid.t1 - t)
        sig[i] = np.linalg.svd(g22, compute_uv=False).min() if g22.size else 1.0
        sign[i] = np.sign(np.linalg.det(g22)) if g22.size else 1.0
    flips = np.nonzero(sign[1:] * sign[:-1] < 0)[0]
    crossing = int(flips[0]) if flips.size else None
    i = int(np.argmin(sig))
    if crossing is not None and sig[crossing + 1] < sig[crossing]:
        worst = crossing + 1
    else:
        worst = crossing if crossing is not None else i
    ok = bool(sig[i] > 1.0 / cond_threshold) and crossing is None
    return AprimeReport(float(sig[i]), worst, float(grid.nodes[worst]), ok, crossing)


def _hermite(traj: GriddedTrajectory, field):
    """Cubic Hermite sampler of ``traj`` using its own backward field for slopes.

    Accurate to O(h^4) between nodes; exact at nodes.
    """
    grid = traj.grid
    vals = traj.values
    slopes = np.array([-field(t, v) for t, v in zip(grid.nodes, vals)])
    h = grid.h

    def sample(t):
        x = (t - grid.t0) / h
        i = min(int(np.floor(x)), grid.n_steps - 1)
        w = x - i
        if abs(w) < 1e-12:
            return vals[i]
        if abs(w - 1.0) < 1e-12:
            return vals[i + 1]
        h00 = 2 * w ** 3 - 3 * w ** 2 + 1
        h10 = w ** 3 - 2 * w ** 2 + w
        h01 = -2 * w ** 3 + 3 * w ** 2
        h11 = w ** 3 - w ** 2
        return (h00 * vals[i] + h10 * h * slopes[i]
                + h01 * vals[i + 1] + h11 * h * slopes[i + 1])
    return sample


def offset_field(sys: AssembledSystem, S_at):
    """ds/dtau = (Bhat + S Bbb) s + (Chat + S Cbb)."""
    def f(t, s):
        S = S_at(t)
        return (sys.Bhat + S @ sys.Bbb) @ s + sys.Chat + S @ sys.Cbb
    return f


def solve_offset_ode(sys: AssembledSystem, S: GriddedTrajectory,
                     grid: TimeGrid) -> GriddedTrajectory:
    if S.grid != grid:
        raise ValueError("S lives on a different grid")
    S_at = _hermite(S, riccati_field(sys))
    return rk4_backward(offset_field(sys, S_at), np.zeros(sys.ny), grid)


def minor_gain_field(model: LqgModel):
    A, Q = model.A, model.Q
    M = control_weight(model.B, model.R)

    def f(t, K):
        return K @ A + A.T @ K - 0.5 * K @ M @ K + 2.0 * Q
    return f


def minor_gain_system(model: LqgModel) -> AssembledSystem:
    """The minor gain equation written in the general Riccati form."""
    return AssembledSystem.from_blocks(model.A, -0.5 * control_weight(model.B, model.R),
                                       2.0 * model.Q, model.A.T)


def solve_minor_gain(model: LqgModel, grid: TimeGrid, method: str = "ode") -> GriddedTrajectory:
    """``dK/dt + K A + A'K - 1/2 K B R^-1 B' K + 2Q = 0``, ``K_T = 0``.

    ``method="propagator"`` uses the same closed form as the main equation,
    so that ``K`` and the ``S^{3,2}`` block agree to round-off when the minor
    problem decouples.
    """
    if method == "propagator":
        return solve_riccati_propagator(minor_gain_system(model), grid)
    if method != "ode":
        raise ValueError(f"unknown method {method!r}")
    try:
        return rk4_backward(minor_gain_field(model), np.zeros((model.d, model.d)), grid)
    except BlowUpError as exc:
        raise RiccatiEscapeError(f"minor gain escapes: {exc}", exc.node, exc.time) from exc


def minor_offset_coeffs(S: GriddedTrajectory, K: GriddedTrajectory, s: GriddedTrajectory,
                        d0: int, d: int):
    """Coefficients of ``k_t = Phi1 X0 + Phi2 Xbar + phi0``."""
    if not (S.grid == K.grid == s.grid):
        raise ValueError("S, K and s must share one grid")
    r = slice(d0 + d, d0 + 2 * d)
    phi1 = GriddedTrajectory(S.grid, S.values[:, r, :d0])
    phi2 = GriddedTrajectory(S.grid, S.values[:, r, d0:] - K.values)
    phi0 = GriddedTrajectory(S.grid, s.values[:, r])
    return phi1, phi2, phi0


@dataclass
class RiccatiSolution:
    """Everything the simulators need, on one grid.

    ``S`` is the primary (propagator) solution; ``S_ode`` the RK4 cross-check.
    """

    model: LqgModel
    system: AssembledSystem
    grid: TimeGrid
    S: GriddedTrajectory
    S_ode: GriddedTrajectory | None
    s: GriddedTrajectory
    K: GriddedTrajectory
    Phi1: GriddedTrajectory
    Phi2: GriddedTrajectory
    phi0: GriddedTrajectory
    aprime: AprimeReport | None = None

    def block(self, i: int, j: int) -> np.ndarray:
        """``S^{i,j}`` over the grid, with 1-based block indices."""
        d0, d = self.system.d0, self.system.d
        rows = [slice(0, d0), slice(d0, d0 + d), slice(d0 + d, d0 + 2 * d)][i - 1]
        cols = [slice(0, d0), slice(d0, d0 + d)][j - 1]
        return self.S.values[:, rows, cols]

    def offset(self, i: int) -> np.ndarray:
        d0, d = self.system.d0, self.system.d
        rows = [slice(0, d0), slice(d0, d0 + d), slice(d0 + d, d0 + 2 * d)][i - 1]
        return self.s.values[:, rows]

    @property
    def cross_check_gap(self) -> float:
        if self.S_ode is None:
            return float("nan")
        return float(np.max(np.abs(self.S.values - self.S_ode.values)))

    def major_feedback(self):
        """Per-node ``(G_x0, G_xbar, g)`` with ``u0 = G_x0 X0 + G_xbar Xbar + g``."""
        m = self.model
        L = -0.5 * np.linalg.solve(m.R0, m.B0.T)
        return (np.einsum("ij,njk->nik", L, self.block(1, 1)),
                np.einsum("ij,njk->nik", L, self.block(1, 2)),
                np.einsum("ij,nj->ni", L, self.offset(1)))

    def minor_feedback(self):
        """Per-node ``(G_x, G_x0, G_xbar, g)`` with ``u = G_x X + G_x0 X0 + G_xbar Xbar + g``."""
        m = self.model
        L = -0.5 * np.linalg.solve(m.R, m.B.T)
        return (np.einsum("ij,njk->nik", L, self.K.values),
                np.einsum("ij,njk->nik", L, self.Phi1.values),
                np.einsum("ij,njk->nik", L, self.Phi2.values),
                np.einsum("ij,nj->ni", L, self.phi0.values))


def solve(model: LqgModel, grid: TimeGrid, method: str = "propagator",
          cross_check: bool = True, cond_threshold: float = 1e12) -> RiccatiSolution:
    """Full decoupling: S, s, K and the minor offset coefficients."""
    check(model)
    if abs(grid.t1 - model.T) > 1e-12 or grid.t0 != 0.0:
        raise ValueError(f"grid spans [{grid.t0}, {grid.t1}] but the horizon is T={model.T}")
    sys = assemble_compact(model)
    aprime = check_assumption_Aprime(sys, grid, cond_threshold)
    if not aprime.satisfied:
        raise AssumptionViolation(
            f"Gamma22 singular near node {aprime.worst_node} (t={aprime.worst_time:.6g}), "
            f"min singular value {aprime.min_singular_value:.3g}",
            node=aprime.worst_node, time=aprime.worst_time,
            cond=1.0 / max(aprime.min_singular_value, 1e-300))
    if method == "propagator":
        S = solve_riccati_propagator(sys, grid, cond_threshold)
        S_ode = solve_riccati_ode(sys, grid) if cross_check else None
    elif method == "ode":
        S = S_ode = solve_riccati_ode(sys, grid)
    else:
        raise ValueError(f"unknown method {method!r}")
    s = solve_offset_ode(sys, S, grid)
    K = solve_minor_gain(model, grid, method)
    phi1, phi2, phi0 = minor_offset_coeffs(S, K, s, model.d0, model.d)
    return RiccatiSolution(model, sys, grid, S, S_ode, s, K, phi1, phi2, phi0, aprime)


# -- residual diagnostics ---------------------------------------------------

def riccati_residual(sys: AssembledSystem, S: GriddedTrajectory) -> np.ndarray:
    """Max-entry residual of the Riccati equation at each interior node."""
    dS = central_difference(S)
    f = riccati_field(sys)
    inner = S.values[1:-1]
    res = np.array([dS[i] + f(0.0, inner[i]) for i in range(len(inner))])
    return np.abs(res).reshape(len(res), -1).max(axis=1)


def offset_residual(sys: AssembledSystem, S: GriddedTrajectory,
                    s: GriddedTrajectory) -> np.ndarray:
    ds = central_difference(s)
    res = [ds[i] + (sys.Bhat + Si @ sys.Bbb) @ si + sys.Chat + Si @ sys.Cbb
           for i, (Si, si) in enumerate(zip(S.values[1:-1], s.values[1:-1]))]
    return np.abs(np.array(res)).max(axis=1)


def minor_drift_residual(sol: RiccatiSolution) -> np.ndarray:
    """Coefficient mismatch in the minor adjoint drift at every node.

    With ``Y = K X + Phi1 X0 + Phi2 Xbar + phi0`` and the equilibrium forward
    dynamics of ``(X, X0, Xbar)``, the drift of ``Y`` is affine in
    ``(X, X0, Xbar, 1)``; it is compared term by term with the required
    ``-(A'Y + 2Q X - 2QH X0 - 2Q Hhat Xbar - 2Q eta)``. Time derivatives of
    the coefficient functions come from their defining ODEs.
    """
    m, sys = sol.model, sol.system
    d0, d = m.d0, m.d
    M = control_weight(m.B, m.R)
    rf, kf = riccati_field(sys), minor_gain_field(m)
    of = offset_field(sys, _hermite(sol.S, rf))
    r3 = slice(d0 + d, d0 + 2 * d)
    out = np.empty(len(sol.grid))
    for n, t in enumerate(sol.grid.nodes):
        S, s, K = sol.S.values[n], sol.s.values[n], sol.K.values[n]
        dS = -rf(t, S)
        ds = -of(t, s)
        dK = -kf(t, K)
        P1, P2, p0 = sol.Phi1.values[n], sol.Phi2.values[n], sol.phi0.values[n]
        dP1, dP2, dp0 = dS[r3, :d0], dS[r3, d0:] - dK, ds[r3]
        # forward drifts: d(X0, Xbar) = (Abb + Bbb S)(X0, Xbar) + Bbb s
        fw = sys.Abb + sys.Bbb @ S
        fw_c = sys.Bbb @ s + sys.Cbb
        # dX = (A - M K/2) X - M/2 (Phi1 X0 + Phi2 Xbar + phi0) + F Xbar + G X0
        ax = m.A - 0.5 * M @ K
        ax0 = m.G - 0.5 * M @ P1
        axb = m.F - 0.5 * M @ P2
        ac = -0.5 * M @ p0
        # drift of Y, by coefficient
        coef_x = dK + K @ ax
        coef_x0 = K @ ax0 + dP1 + P1 @ fw[:d0, :d0] + P2 @ fw[d0:, :d0]
        coef_xb = K @ axb + dP2 + P1 @ fw[:d0, d0:] + P2 @ fw[d0:, d0:]
        coef_c = K @ ac + dp0 + P1 @ fw_c[:d0] + P2 @ fw_c[d0:]
        # required drift with Y substituted
        At = m.A.T
        req_x = -(At @ K + 2 * m.Q)
        req_x0 = -(At @ P1 - 2 * m.Q @ m.H)
        req_xb = -(At @ P2 - 2 * m.Q @ m.Hhat)
        req_c = -(At @ p0 - 2 * m.Q @ m.eta)
        out[n] = max(np.abs(coef_x - req_x).max(), np.abs(coef_x0 - req_x0).max(),
                     np.abs(coef_xb - req_xb).max(), np.abs(coef_c - req_c).max())
    return out
