import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from mmfg.numerics import (BlowUpError, DimensionError, GriddedTrajectory, IllConditionedError,
                           TimeGrid, as_matrix, central_difference, expm, interp_eval,
                           invert_checked, rk4_backward)


def test_expm_examples():
    assert np.array_equal(expm(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(expm(np.diag([1.0, 2.0])), np.diag([math.e, math.e ** 2]),
                               rtol=1e-13)
    np.testing.assert_allclose(expm([[0.0, 1.0], [0.0, 0.0]]), [[1, 1], [0, 1]], atol=1e-15)
    th = math.pi / 2
    np.testing.assert_allclose(expm([[0, -th], [th, 0]]), [[0, -1], [1, 0]], atol=1e-12)


def test_expm_matches_eigendecomposition_on_large_symmetric_input():
    rng = np.random.default_rng(0)
    B = rng.standard_normal((5, 5))
    S = 3 * (B + B.T)
    w, V = np.linalg.eigh(S)
    ref = (V * np.exp(w)) @ V.T
    np.testing.assert_allclose(expm(S), ref, rtol=1e-11)


def test_expm_rejects_non_square():
    with pytest.raises(DimensionError):
        expm(np.zeros((2, 3)))


small = arrays(np.float64, (3, 3), elements=st.floats(-1.5, 1.5))


@settings(max_examples=60, deadline=None)
@given(small)
def test_expm_inverse_property(m):
    if np.linalg.norm(m, 2) > 5:
        m = m * 5 / np.linalg.norm(m, 2)
    np.testing.assert_allclose(expm(m) @ expm(-m), np.eye(3), atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(small, st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_expm_semigroup(m, a, b):
    np.testing.assert_allclose(expm(m * a) @ expm(m * b), expm(m * (a + b)),
                               atol=1e-10 * max(1.0, np.abs(expm(m * (a + b))).max()))


def test_timegrid():
    g = TimeGrid(1.0, 4)
    assert g.h == 0.25 and len(g) == 5
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0
    assert np.array_equal(g.nodes, TimeGrid(1.0, 4).nodes)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 1)


def test_gridded_trajectory_length_checked():
    with pytest.raises(DimensionError):
        GriddedTrajectory(TimeGrid(1.0, 4), np.zeros((3, 2)))


def test_as_matrix():
    assert as_matrix(2.0).shape == (1, 1)
    with pytest.raises(ValueError):
        as_matrix([[np.nan]])
    with pytest.raises(DimensionError):
        as_matrix(np.zeros((2, 2, 2)))


def test_rk4_constant_field():
    g = TimeGrid(1.0, 10)
    C = np.array([[1.0, 2.0], [3.0, 4.0]])
    tr = rk4_backward(lambda t, v: np.zeros_like(v), C, g)
    assert all(np.array_equal(v, C) for v in tr.values)


def test_rk4_linear_scalar():
    # dV/dt = V, V(1) = 1 -> e^{t-1}; in time-to-go the field is -V
    g = TimeGrid(1.0, 50)
    tr = rk4_backward(lambda t, v: -v, np.array(1.0), g)
    assert tr.values[-1] == 1.0
    err = np.abs(tr.values - np.exp(g.nodes - 1)).max()
    assert err <= 10 * g.h ** 4


def test_rk4_tanh():
    g = TimeGrid(1.0, 1000)
    tr = rk4_backward(lambda t, v: 1 - v * v, np.array(0.0), g)
    assert np.abs(tr.values - np.tanh(1 - g.nodes)).max() <= 1e-8


def test_rk4_matches_expm_with_h4_scaling():
    A = np.array([[0.3, -1.0], [0.8, -0.2]])
    v0 = np.array([1.0, -0.5])
    errs = []
    for n in (10, 20, 40):
        g = TimeGrid(1.0, n)
        tr = rk4_backward(lambda t, v: A @ v, v0, g)
        ref = np.array([expm(A * (1 - t)) @ v0 for t in g.nodes])
        errs.append(np.abs(tr.values - ref).max())
    # fourth order: halving h divides the error by about 16
    assert errs[0] / errs[1] > 12 and errs[1] / errs[2] > 12
    assert errs[-1] <= 1.0 * (1 / 40) ** 4


def test_rk4_blow_up_reports_node():
    g = TimeGrid(2.0, 200)
    with pytest.raises(BlowUpError) as info:
        rk4_backward(lambda t, v: v * v * 1e3 + 1e3, np.array(1.0), g)
    assert 0 <= info.value.node < 200


def test_invert_checked():
    assert np.array_equal(invert_checked(np.eye(2)), np.eye(2))
    np.testing.assert_allclose(invert_checked(np.diag([2.0, 4.0])), np.diag([0.5, 0.25]))
    with pytest.raises(IllConditionedError) as info:
        invert_checked([[1.0, 1.0], [1.0, 1.0]])
    assert info.value.cond > 1e12


def test_interp_eval():
    g = TimeGrid(1.0, 10)
    lin = GriddedTrajectory(g, np.stack([g.nodes, 2 * g.nodes], axis=1))
    assert np.array_equal(interp_eval(lin, g.nodes[3]), lin.values[3])
    np.testing.assert_allclose(interp_eval(lin, 0.05), 0.5 * (lin.values[0] + lin.values[1]))
    with pytest.raises(ValueError):
        interp_eval(lin, 1.5)


def test_interp_tanh_within_h2():
    g = TimeGrid(1.0, 100)
    tr = rk4_backward(lambda t, v: 1 - v * v, np.array(0.0), g)
    for t in (0.123, 0.5551, 0.987):
        assert abs(interp_eval(tr, t) - math.tanh(1 - t)) <= g.h ** 2


def test_central_difference_on_quadratic_is_exact():
    g = TimeGrid(1.0, 10)
    tr = GriddedTrajectory(g, g.nodes ** 2)
    np.testing.assert_allclose(central_difference(tr), 2 * g.nodes[1:-1], atol=1e-12)
