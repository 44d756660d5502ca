"""The equilibrium major feedback must be the major's best response when the
minors keep their equilibrium control processes.

Oracle: with the minors' mean control generated by a shadow copy of the
equilibrium state, the major faces a plain LQ problem on
``xi = (X0, Xbar, X0*, Xbar*, 1)``. Its Riccati equation is integrated by RK4
on every other node of a fine grid, and the best-response gains at ``xi``
with ``(X0, Xbar) = (X0*, Xbar*)`` are compared with the equilibrium gains.
"""
import numpy as np
import pytest

from conftest import random_models
from mmfg import TimeGrid, solve
from mmfg.example6 import ExampleParams, embedded_model


def augmented(sol, n):
    m = sol.model
    d0, d = m.d0, m.d
    a0, ab, c0 = (x[n] for x in sol.major_feedback())
    gx, gx0, gxb, g = (x[n] for x in sol.minor_feedback())
    nz = 2 * (d0 + d) + 1
    i0, ib, j0, jb, one = (slice(0, d0), slice(d0, d0 + d), slice(d0 + d, 2 * d0 + d),
                           slice(2 * d0 + d, 2 * (d0 + d)), slice(nz - 1, nz))
    Ab = np.zeros((nz, nz))
    # deviating major on the actual state, minors on their frozen (shadow) controls
    Ab[i0, i0], Ab[i0, ib] = m.A0, m.F0
    Ab[ib, i0], Ab[ib, ib] = m.G, m.A + m.F
    ubar = (m.B @ gx0, m.B @ (gx + gxb), (m.B @ g)[:, None])
    for rows in (ib, jb):
        Ab[rows, j0] += ubar[0]
        Ab[rows, jb] += ubar[1]
        Ab[rows, one] += ubar[2]
    Ab[j0, j0], Ab[j0, jb] = m.A0 + m.B0 @ a0, m.F0 + m.B0 @ ab
    Ab[j0, one] = (m.B0 @ c0)[:, None]
    Ab[jb, j0] += m.G
    Ab[jb, jb] += m.A + m.F
    Bb = np.zeros((nz, m.k0))
    Bb[i0] = m.B0
    C = np.zeros((d0, nz))
    C[:, i0], C[:, ib], C[:, one] = np.eye(d0), -m.H0, -m.eta0[:, None]
    return Ab, Bb, C.T @ m.Q0 @ C


def best_response_gains(model, n_steps):
    fine = solve(model, TimeGrid(model.T, 2 * n_steps))
    m, h = model, 2 * fine.grid.h
    Rinv = np.linalg.inv(m.R0)

    def f(n, P):
        Ab, Bb, Qb = augmented(fine, n)
        return Ab.T @ P + P @ Ab - P @ Bb @ Rinv @ Bb.T @ P + Qb

    nz = 2 * (m.d0 + m.d) + 1
    P = np.zeros((nz, nz))
    out = [None] * (n_steps + 1)
    for k in range(n_steps, -1, -1):
        Bb = augmented(fine, 2 * k)[1]
        L = -Rinv @ Bb.T @ P
        d0, d = m.d0, m.d
        out[k] = (L[:, :d0] + L[:, d0 + d:2 * d0 + d], L[:, d0:d0 + d] + L[:, 2 * d0 + d:-1],
                  L[:, -1])
        if k == 0:
            break
        n = 2 * k  # step backward from node 2k to 2k - 2 with midpoint 2k - 1
        k1 = f(n, P)
        k2 = f(n - 1, P + 0.5 * h * k1)
        k3 = f(n - 1, P + 0.5 * h * k2)
        k4 = f(n - 2, P + h * k3)
        P = P + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return fine, out


@pytest.mark.parametrize("which", ["example", "random0", "random1", "random2", "random3"])
def test_equilibrium_major_is_best_response(which):
    if which == "example":
        model = embedded_model(ExampleParams(a=0.7, b=1.2, c=0.9, q=1.1))
    else:
        model = random_models(4, seed=77)[int(which[-1])]
    n_steps = 200
    fine, br = best_response_gains(model, n_steps)
    eq = fine.major_feedback()
    gap = max(np.abs(eq[j][2 * k] - br[k][j]).max() for k in range(n_steps + 1) for j in range(3))
    assert gap < 1e-6
