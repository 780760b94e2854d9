import math

import numpy as np
import pytest

from radgraph import (
    AdmissibilityLoss,
    BarrierViolation,
    ConfigError,
    CurvatureSpec,
    DirectProblem,
    FixedPointStall,
    NonConvergence,
    PathFailure,
    ScalarField,
    SolverConfig,
    Theorem3Problem,
    build_bundle_grid,
    continuity_path_theorem3,
    convergence_study,
    manufactured_curvature,
    monitor_bounds,
    nagumo_iteration_theorem4,
    newton_solve,
    uniqueness_probe,
)


# ---------------------------------------------------------------- configuration


@pytest.mark.parametrize("kw", [dict(tol=0), dict(r1=1.5), dict(r2=0.5), dict(sigma=1.5),
                                dict(linear_solver="magic"), dict(max_iters=0)])
def test_solver_config_validation(kw):
    with pytest.raises(ConfigError):
        SolverConfig(**kw)


# ---------------------------------------------------------------- Newton


@pytest.mark.parametrize("d", [1, 2])
def test_newton_unit_sphere_from_offset(d):
    g = build_bundle_grid(0, d, fiber_res=64 if d == 1 else 16)
    u, rep = newton_solve(DirectProblem(g, CurvatureSpec.constant(1.0)), ScalarField.constant(g, 0.3),
                          SolverConfig())
    assert np.max(np.abs(u.values)) <= 1e-8
    assert len(rep.residual_histories[-1]) - 1 <= 10


def test_newton_constant_four(circle64):
    u, _ = newton_solve(DirectProblem(circle64, CurvatureSpec.constant(4.0)),
                        ScalarField.constant(circle64, 0.0), SolverConfig())
    assert np.max(np.abs(u.values + math.log(4))) <= 1e-8


def test_newton_manufactured_history_and_guard():
    g = build_bundle_grid(0, 1, fiber_res=64)
    K, exact = manufactured_curvature("0.1*cos(theta)", 0, 1)
    u, rep = newton_solve(DirectProblem(g, K), ScalarField.constant(g, 0.0), SolverConfig())
    hist = rep.residual_histories[-1]
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    assert min(rep.admissibility_trace) > 0
    assert np.max(np.abs(u.values - exact(g))) <= 10 * g.h**2
    assert rep.lemma1_iterates["violations"] == 0


def test_newton_rejects_inadmissible_start(circle64):
    u0 = ScalarField(2 * np.cos(circle64.angles[:, 0]), circle64)
    with pytest.raises(AdmissibilityLoss):
        newton_solve(DirectProblem(circle64, CurvatureSpec.constant(1.0)), u0, SolverConfig())


def test_newton_iteration_cap(circle64):
    K, _ = manufactured_curvature("0.3*cos(theta)", 0, 1)
    with pytest.raises(NonConvergence) as info:
        newton_solve(DirectProblem(circle64, K), ScalarField.constant(circle64, 0.0),
                     SolverConfig(max_iters=1))
    assert info.value.report is not None


def test_mean_pin_selects_member_of_family():
    g = build_bundle_grid(0, 2, fiber_res=16)
    K = CurvatureSpec.homothety(3, "1")
    for pin in (0.0, 0.7):
        u, _ = newton_solve(DirectProblem(g, K, mean_pin=pin), ScalarField.constant(g, 0.2),
                            SolverConfig())
        assert abs(g.mean(u.values) - pin) <= 1e-10


def test_iterative_linear_solver_option(circle64):
    K, exact = manufactured_curvature("0.1*cos(theta)", 0, 1)
    cfg = SolverConfig(linear_solver="iterative")
    u, _ = newton_solve(DirectProblem(circle64, K), ScalarField.constant(circle64, 0.0), cfg)
    assert np.max(np.abs(u.values - exact(circle64))) <= 10 * circle64.h**2


# ---------------------------------------------------------------- continuity family


def test_theorem3_trivial_flat_path(bundle11):
    u, rep = continuity_path_theorem3(bundle11, CurvatureSpec.constant(1.0), SolverConfig(lam=2.0))
    assert np.max(np.abs(u.values)) <= 1e-12
    assert all(s["c0_bound_satisfied"] for s in rep.steps)


@pytest.mark.parametrize("n", [0, 1])
def test_theorem3_constant_e(n):
    g = build_bundle_grid(n, 1, base_res=8, fiber_res=16)
    u, rep = continuity_path_theorem3(g, CurvatureSpec.constant(math.e), SolverConfig(lam=1.0))
    assert np.max(np.abs(u.values - 1.0)) <= 1e-8
    assert rep.monitors[-1]["c0_bound_satisfied"]
    assert max(rep.residuals["log_n1"], rep.residuals["log_n2"]) <= 1e-8


def test_theorem3_fibre_data_on_point_base():
    g = build_bundle_grid(0, 1, fiber_res=64)
    f = CurvatureSpec.expression("1 + 0.2*cos(theta)")
    u, rep = continuity_path_theorem3(g, f, SolverConfig(lam=1.0))
    assert rep.converged
    assert np.max(np.abs(u.values)) <= math.log(1.2) + 10 * g.h**2
    assert all(s["c0_bound_satisfied"] for s in rep.steps)


def test_theorem3_self_convergence():
    f = CurvatureSpec.expression("1 + 0.2*cos(theta)")

    def solve(N):
        return continuity_path_theorem3(build_bundle_grid(0, 1, fiber_res=N), f, SolverConfig())[0]

    res = convergence_study(solve, [32, 64, 128])
    assert res.within(2.0, 0.3)


def test_theorem3_base_dependent_data_reports_failure():
    # N1 = 1 on a flat torus with trivial connection admits only u constant in x,
    # so data depending on x has no solution; the path must fail loudly.
    g = build_bundle_grid(1, 1, base_res=8, fiber_res=16)
    f = CurvatureSpec.fiber_constant("1 + 0.2*cos(x)")
    with pytest.raises(PathFailure) as info:
        continuity_path_theorem3(g, f, SolverConfig())
    assert info.value.report.failure_reason


# ---------------------------------------------------------------- fixed-point scheme


@pytest.mark.parametrize("d,K", [(1, "rho^(-2)"), (1, "2/(1+rho)"), (2, "1")])
def test_nagumo_known_spheres(d, K):
    g = build_bundle_grid(0, d, fiber_res=32 if d == 1 else 16)
    spec = CurvatureSpec.constant(1.0) if K == "1" else CurvatureSpec.radial(K)
    u, rep = nagumo_iteration_theorem4(g, spec, SolverConfig(r1=0.5, r2=2.0))
    assert np.max(np.abs(u.values)) <= 1e-8
    assert rep.residuals["log_direct"] <= 1e-8


def test_nagumo_degenerate_window():
    g = build_bundle_grid(0, 1, fiber_res=32)
    u, _ = nagumo_iteration_theorem4(g, CurvatureSpec.radial("rho^(-2)"), SolverConfig(r1=1.0, r2=1.0))
    assert np.max(np.abs(u.values)) <= 1e-8


@pytest.mark.parametrize("d,K", [(1, "(1+0.3*cos(theta))/rho^2"), (2, "(1+0.3*cos(phi))/rho^3")])
def test_nagumo_nontrivial(d, K):
    g = build_bundle_grid(0, d, fiber_res=32 if d == 1 else 16)
    u, rep = nagumo_iteration_theorem4(g, CurvatureSpec.expression(K), SolverConfig(r1=0.5, r2=2.0))
    assert rep.residuals["log_direct"] <= 1e-8
    assert np.ptp(u.values) > 0.05
    mon = rep.monitors[-1]
    assert mon["c0_bound_satisfied"] and mon["lemma2_holds"]
    assert not rep.warnings


def test_nagumo_barrier_violation():
    # psi(r) = 4 / r^2 = 1 at r = 2, outside [0.5, 1.2] even with the 10 h^2 slack
    g = build_bundle_grid(0, 1, fiber_res=64)
    with pytest.raises(BarrierViolation) as info:
        nagumo_iteration_theorem4(g, CurvatureSpec.radial("4*rho^(-3)"), SolverConfig(r1=0.5, r2=1.2))
    assert info.value.report.failure_reason


def test_nagumo_stalls_on_homothety_data():
    g = build_bundle_grid(0, 1, fiber_res=16)
    with pytest.raises(FixedPointStall) as info:
        nagumo_iteration_theorem4(g, CurvatureSpec.homothety(2, "1 + 0.2*cos(theta)"),
                                  SolverConfig(r1=0.5, r2=2.0))
    assert info.value.report.sweeps


# ---------------------------------------------------------------- monitors


def test_monitor_zero_field(bundle12):
    rec = monitor_bounds(ScalarField.constant(bundle12, 0.0))
    assert rec["osc"] == 0 and rec["grad_h_max"] == 0 and rec["grad_v_max"] == 0
    assert rec["lemma1_bound"] == 0 and rec["lemma1_holds"]
    assert np.isclose(rec["band_min"], bundle12.n + bundle12.m - 1)


def test_monitor_lemma1_small_cosine(circle64):
    rec = monitor_bounds(ScalarField(0.1 * np.cos(circle64.angles[:, 0]), circle64))
    assert rec["grad_v_max"] == pytest.approx(0.01, abs=10 * circle64.h**2 * 0.01)
    assert rec["lemma1_bound"] == pytest.approx(math.expm1(0.4), rel=1e-12)
    assert rec["lemma1_holds"] and not rec["lemma1_violation"]


def test_monitor_omega_reported(sphere16):
    rec = monitor_bounds(ScalarField(0.1 * np.cos(sphere16.angles[:, 0]), sphere16), omega=True)
    assert rec["omega"] > 0


# ---------------------------------------------------------------- uniqueness


def test_uniqueness_trivial():
    g = build_bundle_grid(0, 1, fiber_res=32)
    prob = Theorem3Problem(g, CurvatureSpec.constant(1.0), 1.0)
    gap = uniqueness_probe(prob, ScalarField.constant(g, 0.2), ScalarField.constant(g, -0.2), SolverConfig())
    assert gap <= 1e-8


def test_uniqueness_constant_e():
    g = build_bundle_grid(0, 2, fiber_res=16)
    prob = Theorem3Problem(g, CurvatureSpec.constant(math.e), 1.0)
    gap, ua, _ = uniqueness_probe(prob, ScalarField.constant(g, 0.0), ScalarField.constant(g, 2.0),
                                  SolverConfig(), return_solutions=True)
    assert gap <= 1e-8
    assert np.max(np.abs(ua.values - 1)) <= 1e-8


def test_uniqueness_fails_for_homothety_family():
    g = build_bundle_grid(0, 2, fiber_res=16)
    prob = DirectProblem(g, CurvatureSpec.homothety(3, "1"), mean_pin="start")
    gap = uniqueness_probe(prob, ScalarField.constant(g, 0.1), ScalarField.constant(g, 0.6), SolverConfig())
    assert gap == pytest.approx(0.5, abs=1e-8)


def test_uniqueness_parallel_equals_serial():
    g = build_bundle_grid(0, 1, fiber_res=32)
    prob = Theorem3Problem(g, CurvatureSpec.expression("1 + 0.2*cos(theta)"), 1.0)
    a = ScalarField.constant(g, 0.1)
    b = ScalarField(0.05 * np.cos(g.angles[:, 0]), g)
    gp, ua, ub = uniqueness_probe(prob, a, b, SolverConfig(), parallel=True, return_solutions=True)
    gs, va, vb = uniqueness_probe(prob, a, b, SolverConfig(), parallel=False, return_solutions=True)
    assert np.array_equal(ua.values, va.values) and np.array_equal(ub.values, vb.values)
    assert gp == gs
