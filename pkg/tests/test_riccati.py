import math

import numpy as np
import pytest

from conftest import random_models
from mmfg.example6 import ExampleParams, embedded_model
from mmfg.model import AssembledSystem, assemble_compact, zero_model
from mmfg.numerics import GriddedTrajectory, TimeGrid
from mmfg.riccati import (AssumptionViolation, RiccatiEscapeError, check_assumption_Aprime,
                          minor_drift_residual, minor_offset_coeffs, offset_residual,
                          riccati_residual, solve, solve_minor_gain, solve_offset_ode,
                          solve_riccati_ode, solve_riccati_propagator)

G1000 = TimeGrid(1.0, 1000)


def scalar(alpha, beta, **kw):
    return AssembledSystem.from_blocks([[0.0]], [[-beta]], [[alpha]], [[0.0]], **kw)


def test_zero_ahat_gives_zero_S():
    sys = AssembledSystem.from_blocks([[0.3]], [[-1.0]], [[0.0]], [[0.2]])
    assert not solve_riccati_ode(sys, TimeGrid(1.0, 50)).values.any()


@pytest.mark.parametrize("alpha,beta", [(1.0, 1.0), (2.0, 0.5), (0.3, 3.0)])
def test_scalar_tanh_oracle(alpha, beta):
    sys = scalar(alpha, beta)
    exact = math.sqrt(alpha / beta) * np.tanh(math.sqrt(alpha * beta) * (1 - G1000.nodes))
    ode = solve_riccati_ode(sys, G1000).values[:, 0, 0]
    prop = solve_riccati_propagator(sys, G1000).values[:, 0, 0]
    assert np.abs(ode - exact).max() <= 1e-8
    assert np.abs(prop - exact).max() <= 1e-8


def test_zero_generator():
    sys = AssembledSystem.from_blocks(np.zeros((2, 2)), np.zeros((2, 3)), np.zeros((3, 2)),
                                      np.zeros((3, 3)))
    S = solve_riccati_propagator(sys, TimeGrid(1.0, 10))
    assert not S.values.any()
    rep = check_assumption_Aprime(sys, TimeGrid(1.0, 10))
    assert rep.satisfied and rep.min_singular_value == 1.0


def test_terminal_condition_recovered(random_solution):
    assert not random_solution.S.values[-1].any()
    assert not random_solution.s.values[-1].any()
    assert not random_solution.K.values[-1].any()
    for tr in (random_solution.Phi1, random_solution.Phi2, random_solution.phi0):
        assert not tr.values[-1].any()


def test_example_cross_solver_and_aprime():
    sys = assemble_compact(embedded_model(ExampleParams()))
    a = solve_riccati_ode(sys, G1000).values
    b = solve_riccati_propagator(sys, G1000).values
    assert np.abs(a - b).max() <= 1e-6
    assert check_assumption_Aprime(sys, G1000).satisfied


def _crossing_scale():
    """Bisect the cost scale at which the wrong-sign scalar system first loses
    solvability on [0, 1] (tan escape at sqrt(alpha beta) T = pi/2)."""
    lo, hi = 0.1, 10.0
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        rep = check_assumption_Aprime(scalar(mid, -1.0), TimeGrid(1.0, 200))
        lo, hi = (mid, hi) if rep.satisfied else (lo, mid)
    return hi


def test_adversarial_aprime_violation():
    # with Bbb = +1 the Riccati solution is tan(sqrt(alpha)(T - t))
    alpha = _crossing_scale()
    assert abs(alpha - (math.pi / 2) ** 2) < 0.05
    g = TimeGrid(1.0, 200)
    rep = check_assumption_Aprime(scalar(4 * alpha, -1.0), g)
    assert not rep.satisfied
    t_escape = 1 - (math.pi / 2) / math.sqrt(4 * alpha)
    assert abs(rep.worst_time - t_escape) <= 2 * g.h


def test_propagator_raises_near_singular_node():
    # tan escape at t = 1 - pi/4 falls on a node of this grid
    # (a 1x1 block always has condition number 1, so pair it with a benign one)
    bad = AssembledSystem.from_blocks(np.zeros((2, 2)), np.diag([1.0, -1.0]),
                                      np.diag([4.0, 1.0]), np.zeros((2, 2)))
    with pytest.raises(AssumptionViolation) as info:
        solve_riccati_propagator(bad, TimeGrid(1.0, 400), cond_threshold=1e3)
    assert abs(info.value.time - (1 - math.pi / 4)) < 0.01


def test_solve_raises_on_aprime_violation(monkeypatch):
    import dataclasses
    import mmfg.riccati as R
    m = embedded_model(ExampleParams(q=5.0))
    flipped = dataclasses.replace(assemble_compact(m), Bbb=-assemble_compact(m).Bbb)
    monkeypatch.setattr(R, "assemble_compact", lambda model: flipped)
    with pytest.raises(AssumptionViolation) as info:
        solve(m, TimeGrid(1.0, 200))
    assert 0 < info.value.time < 1


def test_ode_escape_raises():
    bad = AssembledSystem.from_blocks([[0.0]], [[50.0]], [[50.0]], [[0.0]])
    with pytest.raises(RiccatiEscapeError):
        solve_riccati_ode(bad, TimeGrid(1.0, 100))


def test_offset_zero_forcing():
    sys = scalar(1.0, 1.0)
    S = solve_riccati_ode(sys, G1000)
    assert not solve_offset_ode(sys, S, G1000).values.any()


def test_offset_scalar_oracle():
    # Ahat = 0 so S = 0 and ds/dt = -bh s - c with s_T = 0
    bh, c = 0.7, -1.3
    sys = AssembledSystem.from_blocks([[0.0]], [[-1.0]], [[0.0]], [[bh]], Chat=[c])
    S = solve_riccati_ode(sys, G1000)
    s = solve_offset_ode(sys, S, G1000).values[:, 0]
    exact = c / bh * (np.exp(bh * (1 - G1000.nodes)) - 1)
    assert np.abs(s - exact).max() <= 1e-8


def test_offset_grid_mismatch():
    sys = scalar(1.0, 1.0)
    S = solve_riccati_ode(sys, TimeGrid(1.0, 10))
    with pytest.raises(ValueError):
        solve_offset_ode(sys, S, TimeGrid(1.0, 20))


def test_example_offset_vanishes(example_solution):
    assert not example_solution.s.values.any()


def test_minor_gain_cases():
    assert not solve_minor_gain(zero_model(), G1000).values.any()
    m = zero_model(B=[[1.0]], Q=[[0.5]])
    K = solve_minor_gain(m, G1000).values[:, 0, 0]
    exact = math.sqrt(2) * np.tanh((1 - G1000.nodes) / math.sqrt(2))
    assert np.abs(K - exact).max() <= 1e-8


def test_example_minor_gain_vanishes(example_solution):
    assert not example_solution.K.values.any()
    _, _, _, g = example_solution.minor_feedback()
    assert not g.any()


def test_minor_offset_coeffs(example_solution):
    sol = example_solution
    # K = 0 so Phi2 is S32 itself
    np.testing.assert_array_equal(sol.Phi2.values, sol.block(3, 2))
    np.testing.assert_array_equal(sol.Phi1.values, sol.block(3, 1))
    with pytest.raises(ValueError):
        minor_offset_coeffs(sol.S, GriddedTrajectory(TimeGrid(1.0, 5), np.zeros((6, 1, 1))),
                            sol.s, 1, 1)


@pytest.mark.parametrize("model", random_models(), ids=lambda m: f"d{m.d}")
def test_random_model_decoupling(model):
    g = TimeGrid(1.0, 1000)
    sol = solve(model, g)
    assert sol.aprime.satisfied
    assert sol.cross_check_gap <= 1e-6
    assert riccati_residual(sol.system, sol.S).max() <= 10 * g.h ** 2
    assert offset_residual(sol.system, sol.S, sol.s).max() <= 10 * g.h ** 2
    assert minor_drift_residual(sol).max() <= 1e-6


def test_feedback_gain_index_mapping(random_solution):
    sol = random_solution
    m = sol.model
    Gx0, Gxb, g = sol.major_feedback()
    n = 17
    S, s = sol.S.values[n], sol.s.values[n]
    L = -0.5 * np.linalg.inv(m.R0) @ m.B0.T
    np.testing.assert_allclose(Gx0[n], L @ S[:1, :1], rtol=1e-12)
    np.testing.assert_allclose(Gxb[n], L @ S[:1, 1:], rtol=1e-12)
    np.testing.assert_allclose(g[n], L @ s[:1], rtol=1e-12)
    Gx, Gmx0, Gmxb, gm = sol.minor_feedback()
    Lm = -0.5 * np.linalg.inv(m.R) @ m.B.T
    np.testing.assert_allclose(Gx[n], Lm @ sol.K.values[n], rtol=1e-12)
    np.testing.assert_allclose(Gmx0[n], Lm @ S[3:, :1], rtol=1e-12)
    np.testing.assert_allclose(Gmxb[n], Lm @ (S[3:, 1:] - sol.K.values[n]), rtol=1e-12)
    np.testing.assert_allclose(gm[n], Lm @ s[3:], rtol=1e-12)


def test_solve_options():
    m = embedded_model(ExampleParams())
    with pytest.raises(ValueError):
        solve(m, TimeGrid(2.0, 10))
    with pytest.raises(ValueError):
        solve(m, TimeGrid(1.0, 10), method="euler")
    sol = solve(m, TimeGrid(1.0, 100), method="ode")
    assert sol.S is sol.S_ode and sol.cross_check_gap == 0.0


def test_minor_gain_methods_agree(random_solution):
    m = random_solution.model
    a = solve_minor_gain(m, G1000, "ode").values
    b = solve_minor_gain(m, G1000, "propagator").values
    assert np.abs(a - b).max() <= 1e-8
    with pytest.raises(ValueError):
        solve_minor_gain(m, G1000, "magic")
