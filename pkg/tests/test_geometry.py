import numpy as np
import pytest
from hypothesis import given, strategies as st

from radgraph import (
    GridError,
    ScalarField,
    build_bundle_grid,
    covariant_gradient,
    covariant_hessian,
    radial_identity_check,
    vertical_third_derivative,
)


# ---------------------------------------------------------------- grids


def test_circle_grid_weights():
    g = build_bundle_grid(0, 1, fiber_res=64)
    assert g.size == 64
    assert np.allclose(g.weights, 2 * np.pi / 64, rtol=0, atol=1e-15)
    assert g.mu == (0,)


def test_sphere_grid_measure_and_poles():
    g = build_bundle_grid(0, 2, fiber_res=(32, 64))
    assert g.fiber.shape == (32, 64)
    assert abs(g.weights.sum() - 4 * np.pi) <= 1e-10 * 4 * np.pi
    assert np.all(g.weights > 0)
    assert g.fiber.phi.min() > 0 and g.fiber.phi.max() < np.pi


def test_bundle_counts():
    g = build_bundle_grid(1, 1, base_res=16, fiber_res=32)
    assert g.size == 512
    assert g.mu == (1, 0)


@pytest.mark.parametrize("n,d", [(0, 1), (1, 1), (2, 1), (0, 2), (1, 2), (2, 2)])
def test_quadrature_measure(n, d):
    g = build_bundle_grid(n, d, base_res=8, fiber_res=8)
    exact = (2 * np.pi) ** n * (2 * np.pi if d == 1 else 4 * np.pi)
    assert abs(g.integrate(np.ones(g.size)) - exact) <= 1e-10 * exact


@pytest.mark.parametrize("kw", [dict(n=3, d=1), dict(n=0, d=3), dict(n=0, d=1, fiber_res=4),
                                dict(n=1, d=1, base_res=6), dict(n=0, d=2, fiber_res=(8, 15))])
def test_rejects_bad_grids(kw):
    n, d = kw.pop("n"), kw.pop("d")
    with pytest.raises(GridError):
        build_bundle_grid(n, d, **kw)


@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=4, max_size=4),
       st.floats(1e-8, 1.0))
def test_non_antisymmetric_connection_rejected(entries, bump):
    A = np.array(entries).reshape(2, 2)
    A = A - A.T
    A[0, 0] += bump
    with pytest.raises(GridError):
        build_bundle_grid(1, 1, base_res=8, fiber_res=8, connection=A[None])


def test_antisymmetric_connection_accepted():
    A = np.array([[[0.0, 0.3], [-0.3, 0.0]]])
    g = build_bundle_grid(1, 1, base_res=8, fiber_res=16, connection=A)
    assert g.has_connection


# ---------------------------------------------------------------- derivatives


@given(st.floats(-50, 50, allow_nan=False))
def test_constants_annihilated(c):
    for g in (build_bundle_grid(1, 1, base_res=8, fiber_res=8),
              build_bundle_grid(1, 2, base_res=8, fiber_res=8)):
        D = covariant_hessian(ScalarField.constant(g, c))
        scale = 1e-12 * max(1.0, abs(c))
        for part in (D.grad_h, D.grad_v, D.hess_h, D.hess_v, D.mixed):
            assert np.max(np.abs(part)) <= scale / g.h**2


def _order(errs):
    return [np.log2(errs[k] / errs[k + 1]) for k in range(len(errs) - 1)]


def test_circle_derivatives_second_order():
    eg, eh = [], []
    for N in (32, 64, 128):
        g = build_bundle_grid(0, 1, fiber_res=N)
        th = g.angles[:, 0]
        D = covariant_hessian(ScalarField(np.cos(th), g))
        eg.append(np.max(np.abs(D.grad_v[0] + np.sin(th))))
        eh.append(np.max(np.abs(D.hess_v[0, 0] + np.cos(th))))
    assert all(abs(o - 2) <= 0.2 for o in _order(eg))
    assert all(abs(o - 2) <= 0.2 for o in _order(eh))


def test_sphere_cos_phi_second_order():
    eg, eh = [], []
    for N in (16, 32, 64):
        g = build_bundle_grid(0, 2, fiber_res=N)
        p = g.angles[:, 0]
        D = covariant_hessian(ScalarField(np.cos(p), g))
        eg.append(np.max(np.abs(np.sqrt(D.vertical_norm2()) - np.abs(np.sin(p)))))
        # round-metric Hessian of cos(phi) is -cos(phi) times the metric
        H = D.hess_v
        eh.append(max(np.max(np.abs(H[0, 0] + np.cos(p))), np.max(np.abs(H[1, 1] + np.cos(p))),
                      np.max(np.abs(H[0, 1]))))
    assert all(abs(o - 2) <= 0.2 for o in _order(eg))
    assert all(abs(o - 2) <= 0.2 for o in _order(eh))


def test_vertical_hessian_symmetric(sphere16):
    u = ScalarField.from_function(sphere16, lambda x, a: np.sin(a[:, 0]) * np.cos(2 * a[:, 1]))
    H = covariant_hessian(u).hess_v
    assert np.max(np.abs(H[0, 1] - H[1, 0])) <= 1e-12


def test_base_pullback_has_no_vertical_gradient(bundle12):
    u = ScalarField.from_function(bundle12, lambda x, a: np.sin(x[:, 0]))
    D = covariant_gradient(u)
    assert np.max(np.abs(D.grad_v)) == 0.0


def test_horizontal_derivative_on_torus():
    errs = []
    for N in (16, 32, 64):
        g = build_bundle_grid(1, 1, base_res=N, fiber_res=8)
        x = g.x[:, 0]
        D = covariant_hessian(ScalarField(np.cos(x), g))
        errs.append(max(np.max(np.abs(D.grad_h[0] + np.sin(x))), np.max(np.abs(D.hess_h[0, 0] + np.cos(x)))))
    assert all(abs(o - 2) <= 0.2 for o in _order(errs))


def test_third_derivative_shape(sphere16):
    u = ScalarField.from_function(sphere16, lambda x, a: np.cos(a[:, 0]))
    assert vertical_third_derivative(u).shape == (2, 2, 2, sphere16.size)


# ---------------------------------------------------------------- radial identities


def test_radial_identity_constant_zero(circle64):
    assert radial_identity_check(ScalarField.constant(circle64, 0.7), 1.0) == 0.0


def test_radial_identity_circle_second_order():
    errs = []
    for N in (32, 64, 128):
        g = build_bundle_grid(0, 1, fiber_res=N)
        errs.append(radial_identity_check(ScalarField(np.cos(g.angles[:, 0]), g), 1.0))
    assert all(abs(o - 2) <= 0.3 for o in _order(errs))


def test_radial_identity_sphere_r2():
    errs = []
    for N in (16, 32, 64):
        g = build_bundle_grid(0, 2, fiber_res=N)
        errs.append(radial_identity_check(ScalarField(np.cos(g.angles[:, 0]), g), 2.0))
    assert errs[-1] < 1e-2
    assert all(o >= 1.7 for o in _order(errs))


def test_scalar_field_rejects_nonfinite(circle64):
    v = np.zeros(circle64.size)
    v[3] = np.nan
    with pytest.raises(ValueError):
        ScalarField(v, circle64)
