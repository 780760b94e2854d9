import numpy as np
import pytest
from hypothesis import given, strategies as st

from radgraph import CurvatureError, CurvatureSpec, build_bundle_grid, parse_expression, theorem2_radius


@given(st.floats(-3, 3), st.floats(0.1, 6), st.floats(0.1, 5))
def test_expression_matches_numpy(x, theta, rho):
    f = parse_expression("(2 + cos(x))*exp(-theta^2/4)/rho^2 + sqrt(rho)*log(1+rho) - pi*e")
    env = {"x": np.array([x]), "theta": np.array([theta]), "rho": np.array([rho])}
    want = (2 + np.cos(x)) * np.exp(-theta**2 / 4) / rho**2 + np.sqrt(rho) * np.log(1 + rho) - np.pi * np.e
    assert f(env)[0] == pytest.approx(want, rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("bad", ["__import__('os')", "x.real", "[1,2]", "open(1)", "1 if x else 2",
                                 "lambda: 1", "exp(1, 2)", "z + 1", "x +"])
def test_expression_rejects_outside_grammar(bad):
    with pytest.raises(CurvatureError):
        parse_expression(bad)


def test_expression_missing_variable_on_grid():
    g = build_bundle_grid(0, 1, fiber_res=16)
    K = CurvatureSpec.expression("1 + 0*phi")
    with pytest.raises(CurvatureError):
        K.evaluate(g, 1.0)


def test_nonpositive_values_raise():
    g = build_bundle_grid(0, 1, fiber_res=16)
    with pytest.raises(CurvatureError):
        CurvatureSpec.expression("cos(theta)").evaluate(g, 1.0)
    with pytest.raises(CurvatureError):
        CurvatureSpec.constant(-1.0)


@given(st.floats(0.05, 20), st.floats(0.1, 10))
def test_rho_dlog_homothety(rho, k):
    for m in (2, 3):
        K = CurvatureSpec.homothety(m, str(k))
        val = K.rho_dlog(np.zeros((1, 0)), np.zeros((1, m - 1)), np.array([rho]))[0]
        assert val == pytest.approx(1 - m, abs=1e-9)


def test_expression_rho_dlog_matches_difference():
    K = CurvatureSpec.expression("(1+0.3*cos(theta))/(1+rho^2)")
    x, a, r = np.zeros((3, 0)), np.array([[0.1], [1.0], [2.5]]), np.array([0.5, 1.0, 3.0])
    want = -2 * r**2 / (1 + r**2)
    assert np.allclose(K.rho_dlog(x, a, r), want, atol=1e-10)


@given(st.floats(0.05, 50))
def test_constant_radius(c):
    r = theorem2_radius(CurvatureSpec.constant(c), 2)
    assert r.radius == pytest.approx(1 / c, rel=1e-11)


def test_fiber_constant_ignores_fibre_and_radius():
    g = build_bundle_grid(1, 1, base_res=8, fiber_res=16)
    K = CurvatureSpec.fiber_constant("2 + cos(x)")
    v1, v2 = K.evaluate(g, 1.0), K.evaluate(g, np.linspace(0.5, 3, g.size))
    assert np.array_equal(v1, v2)
    assert np.allclose(v1, 2 + np.cos(g.x[:, 0]), atol=1e-15)


def test_table_constant_and_flags():
    radii = np.array([0.5, 0.8, 1.0, 1.5, 2.0])
    K = CurvatureSpec.table(np.zeros((1, 0)), radii, np.ones((1, 5)))
    r = np.linspace(0.5, 2.0, 31)
    assert np.max(np.abs(K.radial_profile(r) - 1)) <= 1e-12
    assert K.flags() == []
    K.radial_profile(np.array([5.0]))
    assert any("extrapolated" in f for f in K.flags())


def test_table_rejects_nonpositive():
    with pytest.raises(CurvatureError):
        CurvatureSpec.table(np.zeros((1, 0)), [1.0, 2.0], [[1.0, 0.0]])
