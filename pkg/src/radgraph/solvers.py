"""Damped Newton, continuation in t, the averaged fixed-point scheme and bound monitors."""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .curvature import CurvatureSpec
from .curvature_ops import (
    _block,
    _hessian_blocks,
    admissible_tensor,
    linearize_horizontal,
    linearize_vertical,
    residual_direct,
    residual_theorem3,
    residual_theorem4,
)
from .errors import (
    AdmissibilityLoss,
    BarrierViolation,
    ConfigError,
    FixedPointStall,
    NonConvergence,
    PathFailure,
    SingularLinearization,
    SolverError,
)
from .geometry import BundleGrid, ScalarField, covariant_hessian, vertical_third_derivative

__all__ = [
    "SolverConfig",
    "SolveReport",
    "DirectProblem",
    "Theorem3Problem",
    "Theorem4Inner",
    "newton_solve",
    "continuity_path_theorem3",
    "nagumo_iteration_theorem4",
    "monitor_bounds",
    "uniqueness_probe",
]

log = logging.getLogger(__name__)

AUTO_DIRECT_LIMIT = 400_000


@dataclass
class SolverConfig:
    """Solver parameters.

    Attributes
    ----------
    tol : float
        Max-norm target for the log residual.
    max_iters : int
        Newton iterations per solve.
    backtrack, min_step : float
        Step-halving factor and smallest admissible step length.
    dt0, min_dt : float
        Initial and smallest continuation step in ``t``.
    lam : float
        Regularisation ``lambda > 0`` of the continuity family.
    r1, r2 : float, optional
        Barrier radii with ``0 < r1 <= 1 <= r2``.
    admissibility_guard : bool
        Shrink steps until every accepted iterate is admissible.
    sigma : float
        Averaging weight of the fixed-point sweeps.
    stall_sweeps, max_sweeps : int
        Non-contraction window and hard cap on fixed-point sweeps.
    mean_pin : float or "start", optional
        Pin the quadrature mean of ``u`` (direct mode).
    linear_solver : str
        ``"direct"``, ``"iterative"`` (Jacobi-preconditioned GMRES with a
        direct fallback) or ``"auto"`` (direct up to ``AUTO_DIRECT_LIMIT``
        nodes).
    accept_least_squares : bool
        Let an over-determined solve return its least-squares stationary
        point (flagged) instead of raising.
    """

    tol: float = 1e-10
    max_iters: int = 50
    backtrack: float = 0.5
    min_step: float = 2.0**-20
    dt0: float = 0.1
    min_dt: float = 1e-4
    lam: float = 1.0
    r1: Optional[float] = None
    r2: Optional[float] = None
    admissibility_guard: bool = True
    sigma: float = 0.5
    stall_sweeps: int = 20
    max_sweeps: int = 400
    mean_pin: object = None
    linear_solver: str = "auto"
    accept_least_squares: bool = False

    def __post_init__(self):
        problems = []
        for name in ("tol", "backtrack", "min_step", "dt0", "min_dt", "lam", "sigma"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive")
        if self.max_iters < 1:
            problems.append("max_iters must be >= 1")
        if not 0 < self.backtrack < 1:
            problems.append("backtrack must lie in (0, 1)")
        if not 0 < self.sigma <= 1:
            problems.append("sigma must lie in (0, 1]")
        if self.r1 is not None and not 0 < self.r1 <= 1:
            problems.append("r1 must satisfy 0 < r1 <= 1")
        if self.r2 is not None and not self.r2 >= 1:
            problems.append("r2 must satisfy r2 >= 1")
        if self.linear_solver not in ("direct", "iterative", "auto"):
            problems.append("linear_solver must be direct, iterative or auto")
        if problems:
            raise ConfigError("invalid solver configuration: " + "; ".join(problems), problems)


@dataclass
class SolveReport:
    """What happened during a solve.

    ``steps`` holds one record per accepted continuation step (``t``,
    iterations, final residual, ``dt`` and mode-specific checks);
    ``residual_histories`` the max-norm residual after every accepted
    Newton iterate of each solve; ``admissibility_trace`` the smallest
    block eigenvalue of each accepted iterate.
    """

    mode: str
    steps: list = field(default_factory=list)
    residual_histories: list = field(default_factory=list)
    admissibility_trace: list = field(default_factory=list)
    lemma1_iterates: dict = field(default_factory=lambda: {"checked": 0, "violations": 0, "max_ratio": 0.0})
    monitors: list = field(default_factory=list)
    sweeps: list = field(default_factory=list)
    residuals: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    converged: bool = False
    failure_reason: Optional[str] = None
    wall_time: float = 0.0

    def warn(self, msg: str):
        if msg not in self.warnings:
            self.warnings.append(msg)
            log.warning(msg)

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# problems


class _Problem:
    """Nonlinear system ``R(u) = 0`` in log form with its Jacobian."""

    mode = "problem"
    square = True

    def __init__(self, grid: BundleGrid):
        self.grid = grid

    def residual(self, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, v: np.ndarray) -> sp.csr_matrix:
        raise NotImplementedError

    def split(self, r: np.ndarray) -> dict:
        return {"r": r}

    def raw_residuals(self, u: ScalarField) -> dict:
        return {}

    def lemma2_F(self, u: ScalarField) -> np.ndarray:
        """``F`` with ``N1 N2 = (1 + |D^v u|^2)^((m+1)/2) F``."""
        raise NotImplementedError

    def c0_window(self):
        return None

    def pin(self, u0: ScalarField):
        return None

    def solve(self, u0: ScalarField, cfg: SolverConfig):
        return newton_solve(self, u0, cfg)


class DirectProblem(_Problem):
    """``N2(u) = (1+|D^v u|^2)^((m+1)/2) e^((m-1)u) K(e^u xi)``.

    ``mean_pin`` fixes the quadrature mean of ``u``: a number, ``"start"``
    (the mean of each initial guess) or ``None``. Pinning removes the
    constant-shift family of homothety-invariant ``K``.
    """

    mode = "direct"

    def __init__(self, grid, K: CurvatureSpec, mean_pin=None):
        super().__init__(grid)
        self.K = K
        self.mean_pin = mean_pin

    def residual(self, v):
        return residual_direct(ScalarField(v, self.grid), self.K, form="log")

    def jacobian(self, v):
        u = ScalarField(v, self.grid)
        L = linearize_vertical(u, 0.0, 1.0).matrix
        rho = np.exp(v)
        c = (self.grid.m - 1) + self.K.rho_dlogK(self.grid, rho)
        return (L - sp.diags(c)).tocsr()

    def raw_residuals(self, u):
        return {"direct": float(np.max(np.abs(residual_direct(u, self.K))))}

    def lemma2_F(self, u):
        D = _hessian_blocks(u)
        n1 = _block(D.grad_h, D.hess_h)[1]
        return n1 * np.exp((self.grid.m - 1) * u.values) * self.K.evaluate(self.grid, np.exp(u.values))

    def pin(self, u0):
        if self.mean_pin is None:
            return None
        if isinstance(self.mean_pin, str):
            return self.grid.mean(u0.values)
        return float(self.mean_pin)


class Theorem3Problem(_Problem):
    """``N1(u) = 1`` and ``N2(u) = e^(-lam u)[f (1+|D^v u|^2)^((m+1)/2)]^t``.

    For ``n >= 1`` the two residuals are stacked and the system is solved
    in the Gauss-Newton sense.
    """

    mode = "theorem3"

    def __init__(self, grid, f: CurvatureSpec, lam: float, t: float = 1.0):
        super().__init__(grid)
        if not lam > 0:
            raise ConfigError("lambda must be positive", ["lambda must be positive"])
        self.f = f
        self.lam = float(lam)
        self.t = float(t)
        self.square = grid.n == 0
        self._logf = np.log(f.base_values(grid))

    def at(self, t):
        p = Theorem3Problem.__new__(Theorem3Problem)
        p.__dict__.update(self.__dict__)
        p.t = float(t)
        return p

    def residual(self, v):
        r1, r2 = residual_theorem3(ScalarField(v, self.grid), self.f, self.lam, self.t, form="log")
        return r2 if self.square else np.concatenate([r1, r2])

    def jacobian(self, v):
        u = ScalarField(v, self.grid)
        Jv = linearize_vertical(u, self.lam, self.t).matrix
        if self.square:
            return Jv
        return sp.vstack([linearize_horizontal(u).matrix, Jv]).tocsr()

    def split(self, r):
        if self.square:
            return {"n1": 0.0, "n2": float(np.max(np.abs(r)))}
        N = self.grid.size
        return {"n1": float(np.max(np.abs(r[:N]))), "n2": float(np.max(np.abs(r[N:])))}

    def raw_residuals(self, u):
        r1, r2 = residual_theorem3(u, self.f, self.lam, self.t)
        return {"n1": float(np.max(np.abs(r1))), "n2": float(np.max(np.abs(r2)))}

    def lemma2_F(self, u):
        D = _hessian_blocks(u)
        m = self.grid.m
        q = 1.0 + D.vertical_norm2()
        n1 = _block(D.grad_h, D.hess_h)[1]
        fv = np.exp(self._logf)
        return n1 * np.exp(-self.lam * u.values) * fv**self.t * q ** ((m + 1) / 2 * (self.t - 1))

    def c0_window(self):
        b = float(np.max(np.abs(self._logf))) / self.lam
        return (-b, b)


class Theorem4Inner(_Problem):
    """Frozen-coefficient problem whose solution is ``H_t w``."""

    mode = "theorem4"

    def __init__(self, grid, K: CurvatureSpec, w: np.ndarray, t: float):
        super().__init__(grid)
        self.K = K
        self.w = ScalarField(w, grid)
        self.t = float(t)
        self.square = grid.n == 0

    def residual(self, v):
        r1, r2 = residual_theorem4(ScalarField(v, self.grid), self.w, self.K, self.t, form="log")
        return r2 if self.square else np.concatenate([r1, r2])

    def jacobian(self, v):
        u = ScalarField(v, self.grid)
        Jv = linearize_vertical(u, 1.0, 1.0).matrix
        if self.square:
            return Jv
        return sp.vstack([linearize_horizontal(u).matrix, Jv]).tocsr()

    def split(self, r):
        if self.square:
            return {"n1": 0.0, "n2": float(np.max(np.abs(r)))}
        N = self.grid.size
        return {"n1": float(np.max(np.abs(r[:N]))), "n2": float(np.max(np.abs(r[N:])))}


# --------------------------------------------------------------------------
# Newton


def _use_direct(cfg: SolverConfig, grid: BundleGrid) -> bool:
    if cfg.linear_solver == "direct":
        return True
    if cfg.linear_solver == "iterative":
        return False
    # Jacobi-preconditioned GMRES stalls above 1e-12 on the lat-long
    # operator (pole rows scale like 1/sin^2), so auto stays direct at desk scale
    return grid.size <= AUTO_DIRECT_LIMIT


def _solve_linear(A: sp.spmatrix, b: np.ndarray, direct: bool, report: SolveReport) -> np.ndarray:
    A = sp.csc_matrix(A)
    if not direct:
        diag = A.diagonal()
        if np.all(np.abs(diag) > 0):
            M = sp.diags(1.0 / diag)
            x, info = spla.gmres(A, b, M=M, rtol=1e-12, atol=0.0, restart=100, maxiter=5)
            if info == 0 and np.all(np.isfinite(x)):
                return x
        report.warn("iterative linear solve did not reach relative 1e-12; used direct factorisation")
    try:
        x = spla.splu(A).solve(b)
    except RuntimeError as exc:
        raise SingularLinearization(f"Newton matrix is singular: {exc}") from None
    if not np.all(np.isfinite(x)):
        raise SingularLinearization("Newton matrix is numerically singular")
    return x


def _lemma1_ratio(grid: BundleGrid, v: np.ndarray) -> float:
    gv, _ = grid.vertical_derivatives(v)
    bound = math.expm1(2 * float(np.ptp(v)))
    top = float(np.max(np.sum(gv**2, axis=0)))
    if grid.n:
        gh = np.stack([D @ v for D in grid.Dh])
        top = max(top, float(np.max(np.sum(gh**2, axis=0))))
    if bound == 0.0:
        return 0.0 if top <= 1e-28 else math.inf
    return top / bound


def _margin(grid: BundleGrid, v: np.ndarray) -> float:
    return admissible_tensor(ScalarField(v, grid)).margin


def newton_solve(problem: _Problem, u0: ScalarField, cfg: SolverConfig,
                 report: Optional[SolveReport] = None):
    """Damped Newton (Gauss-Newton for stacked systems) with an admissibility guard.

    Parameters
    ----------
    problem
        Supplies the log residual and its Jacobian.
    u0 : ScalarField
        Initial iterate; must be admissible when the guard is on.
    cfg : SolverConfig
    report : SolveReport, optional
        Appended to; a new one is created otherwise.

    Returns
    -------
    (ScalarField, SolveReport)

    Raises
    ------
    NonConvergence, AdmissibilityLoss, SingularLinearization
    """
    grid = problem.grid
    rep = report if report is not None else SolveReport(problem.mode)
    t_start = time.perf_counter()
    direct = _use_direct(cfg, grid)
    pin = problem.pin(u0)
    w = grid.weights / grid.weights.sum()
    v = u0.values.copy()
    N = v.size

    if cfg.admissibility_guard:
        m0 = _margin(grid, v)
        if not m0 > 0:
            raise AdmissibilityLoss(f"initial iterate is not admissible (margin {m0:.3e})", rep)

    def merit(r):
        if problem.square:
            return float(np.max(np.abs(r)))
        return float(np.linalg.norm(r))

    def pin_gap(x):
        return 0.0 if pin is None else float(w @ x) - pin

    r = problem.residual(v)
    if not np.all(np.isfinite(r)):
        raise AdmissibilityLoss("residual undefined at the initial iterate", rep)
    hist = [float(np.max(np.abs(r)))]
    rep.residual_histories.append(hist)
    stationary = False
    it = 0
    while True:
        done = hist[-1] <= cfg.tol and abs(pin_gap(v)) <= cfg.tol
        if done or stationary:
            break
        if it >= cfg.max_iters:
            raise NonConvergence(
                f"no convergence in {cfg.max_iters} iterations (residual {hist[-1]:.3e})", rep
            )
        it += 1
        J = problem.jacobian(v)
        if problem.square:
            if pin is None:
                dv = _solve_linear(J, -r, direct, rep)
            else:
                A = sp.bmat([[J, sp.csr_matrix(np.ones((N, 1)))],
                             [sp.csr_matrix(w[None, :]), None]])
                rhs = np.concatenate([-r, [-pin_gap(v)]])
                dv = _solve_linear(A, rhs, True, rep)[:N]
        else:
            A = (J.T @ J).tocsc()
            g = J.T @ r
            dv = _solve_linear(A, -g, True, rep)
        f0 = merit(r)
        step = 1.0
        admissible_hit = False
        while True:
            trial = v + step * dv
            ok = True
            if cfg.admissibility_guard and not _margin(grid, trial) > 0:
                ok, admissible_hit = False, True
            if ok:
                rt = problem.residual(trial)
                if not np.all(np.isfinite(rt)):
                    ok, admissible_hit = False, True
                elif pin is not None and pin_gap(v) != 0 and step == 1.0:
                    ok = True  # full step restores the pin
                elif merit(rt) > f0 * (1 - 1e-4 * step) and not (
                    merit(rt) <= f0 and f0 <= 10 * cfg.tol
                ):
                    ok = False
            if ok:
                break
            step *= cfg.backtrack
            if step < cfg.min_step:
                if not problem.square and not admissible_hit:
                    stationary = True
                    break
                if admissible_hit:
                    raise AdmissibilityLoss(
                        f"step length fell below {cfg.min_step:.3g} to keep admissibility", rep
                    )
                raise NonConvergence(
                    f"line search failed at iteration {it} (residual {hist[-1]:.3e})", rep
                )
        if stationary:
            break
        v = trial
        r = rt
        hist.append(float(np.max(np.abs(r))))
        rep.admissibility_trace.append(_margin(grid, v))
        _record_lemma1(rep, grid, v)
        if not problem.square:
            gnorm = float(np.linalg.norm(J.T @ r))
            if hist[-1] > cfg.tol and step * float(np.max(np.abs(dv))) <= 1e-13 * (1 + np.max(np.abs(v))):
                stationary = True
            elif hist[-1] > cfg.tol and gnorm <= 1e-12 * max(1.0, merit(r)):
                stationary = True

    rep.wall_time += time.perf_counter() - t_start
    if hist[-1] > cfg.tol:
        msg = f"least-squares stationary point with residual {hist[-1]:.3e}"
        if not cfg.accept_least_squares:
            raise NonConvergence(msg, rep)
        rep.warn(msg)
    return ScalarField(v, grid), rep


def _record_lemma1(rep: SolveReport, grid: BundleGrid, v: np.ndarray):
    ratio = _lemma1_ratio(grid, v)
    rec = rep.lemma1_iterates
    rec["checked"] += 1
    rec["max_ratio"] = max(rec["max_ratio"], ratio if math.isfinite(ratio) else 1e300)
    if ratio > 1 + 1e-12:
        rec["violations"] += 1


# --------------------------------------------------------------------------
# continuation


def _project_n1(grid: BundleGrid, v: np.ndarray, cfg: SolverConfig, rep: SolveReport) -> np.ndarray:
    # minimum-norm Newton steps on log N1 alone
    for _ in range(20):
        u = ScalarField(v, grid)
        D = _hessian_blocks(u)
        n1 = _block(D.grad_h, D.hess_h)[1]
        if np.any(n1 <= 0):
            rep.warn("projection onto N1 = 1 left the admissible cone; projection skipped")
            return v
        r1 = np.log(n1)
        if np.max(np.abs(r1)) <= cfg.tol:
            break
        Lh = linearize_horizontal(u).matrix
        dv = spla.lsqr(Lh, -r1, atol=1e-14, btol=1e-14, iter_lim=10 * v.size)[0]
        v = v + dv
    return v


def continuity_path_theorem3(grid: BundleGrid, f: CurvatureSpec, cfg: SolverConfig,
                             u_start: Optional[ScalarField] = None):
    """Continue the lambda-regularised family from ``t = 0`` (``u = 0``) to ``t = 1``.

    Each accepted step records ``t``, the Newton count, both residuals and
    the check ``|u_t| <= ||log f||_inf / lambda + 10 h^2``. For ``n >= 1``
    the horizontal equation enters through its linearisation in a
    Gauss-Newton corrector, followed by a projection pass onto
    ``N1 = 1``.

    Returns
    -------
    (ScalarField, SolveReport)

    Raises
    ------
    PathFailure
        When the step in ``t`` falls below ``cfg.min_dt``.
    """
    t0 = time.perf_counter()
    rep = SolveReport("theorem3")
    base = Theorem3Problem(grid, f, cfg.lam, 0.0)
    lo, hi = base.c0_window()
    slack = 10 * grid.h**2
    u = u_start if u_start is not None else ScalarField.constant(grid, 0.0)
    r0 = base.split(base.residual(u.values))
    rep.steps.append({"t": 0.0, "iterations": 0, "residual": max(r0.values()), "dt": 0.0,
                      "c0_bound_satisfied": bool(np.max(np.abs(u.values)) <= hi + slack)})
    t, dt = 0.0, cfg.dt0
    try:
        while t < 1.0:
            tn = min(1.0, t + dt)
            prob = base.at(tn)
            n_hist = len(rep.residual_histories)
            try:
                un, _ = newton_solve(prob, u, cfg, rep)
            except (NonConvergence, AdmissibilityLoss, SingularLinearization) as exc:
                del rep.residual_histories[n_hist:]
                dt *= 0.5
                rep.warn(f"continuation step to t={tn:.6g} failed ({exc}); halving dt")
                if dt < cfg.min_dt:
                    raise PathFailure(
                        f"continuation step fell below {cfg.min_dt:g} at t={t:.6g}: {exc}", rep
                    ) from None
                continue
            if grid.n:
                un = ScalarField(_project_n1(grid, un.values, cfg, rep), grid)
            res = prob.split(prob.residual(un.values))
            umax = float(np.max(np.abs(un.values)))
            rep.steps.append({
                "t": tn, "iterations": len(rep.residual_histories[-1]) - 1,
                "residual": max(res.values()), "residual_n1": res["n1"], "residual_n2": res["n2"],
                "dt": tn - t, "max_abs_u": umax,
                "c0_bound": hi, "c0_bound_satisfied": bool(umax <= hi + slack),
            })
            u, t = un, tn
            dt = min(1.5 * dt, 0.5)
    except SolverError as exc:
        rep.converged = False
        rep.failure_reason = str(exc)
        rep.wall_time = time.perf_counter() - t0
        exc.report = rep
        raise
    final = base.at(1.0)
    res = final.split(final.residual(u.values))
    rep.residuals = {"log_n1": res["n1"], "log_n2": res["n2"], **{
        f"raw_{k}": v for k, v in final.raw_residuals(u).items()}}
    rep.converged = max(res.values()) <= cfg.tol
    if not rep.converged:
        rep.failure_reason = f"least-squares endpoint, residual {max(res.values()):.3e}"
    rep.monitors.append(monitor_bounds(u, final))
    rep.wall_time = time.perf_counter() - t0
    return u, rep


def check_barriers(grid: BundleGrid, K: CurvatureSpec, r1: float, r2: float) -> dict:
    """Check ``K > rho^(1-m)`` at ``rho = r1/2`` and ``K < rho^(1-m)`` at ``rho = 2 r2``."""
    m = grid.m
    lo, hi = 0.5 * r1, 2.0 * r2
    Klo = K.evaluate(grid, lo)
    Khi = K.evaluate(grid, hi)
    inner = bool(np.all(Klo > lo ** (1 - m)))
    outer = bool(np.all(Khi < hi ** (1 - m)))
    return {"rho_inner": lo, "rho_outer": hi, "inner_holds": inner, "outer_holds": outer}


def nagumo_iteration_theorem4(grid: BundleGrid, K: CurvatureSpec, cfg: SolverConfig):
    """Averaged fixed-point continuation for the prescribed curvature equation.

    For ``t`` from 0 to 1 the sweeps ``w <- (1 - sigma) w + sigma H_t w``
    run until ``||w - H_t w||_inf <= tol``, where ``H_t w`` solves the
    frozen-coefficient problem by Newton. The final ``u`` must lie in
    ``[log r1 - 10 h^2, log r2 + 10 h^2]``.

    Returns
    -------
    (ScalarField, SolveReport)

    Raises
    ------
    FixedPointStall, BarrierViolation, PathFailure
    """
    if cfg.r1 is None or cfg.r2 is None:
        raise ConfigError("theorem4 mode needs r1 and r2", [n for n in ("r1", "r2") if getattr(cfg, n) is None])
    t0 = time.perf_counter()
    rep = SolveReport("theorem4")
    bar = check_barriers(grid, K, cfg.r1, cfg.r2)
    rep.steps.append({"t": 0.0, "barriers": bar})
    if not (bar["inner_holds"] and bar["outer_holds"]):
        rep.warn(
            "barrier inequalities do not hold on the grid "
            f"(inner at rho={bar['rho_inner']:.4g}: {bar['inner_holds']}, "
            f"outer at rho={bar['rho_outer']:.4g}: {bar['outer_holds']})"
        )
    w = np.zeros(grid.size)
    u = ScalarField(w, grid)
    t, dt = 0.0, cfg.dt0
    try:
        while t < 1.0:
            tn = min(1.0, t + dt)
            try:
                u, sweeps, gap = _fixed_point(grid, K, w, tn, cfg, rep)
            except (NonConvergence, AdmissibilityLoss, SingularLinearization) as exc:
                # a stall is a property of H_t itself, so a smaller t-step cannot cure it
                dt *= 0.5
                rep.warn(f"fixed-point stage at t={tn:.6g} failed ({exc}); halving dt")
                if dt < cfg.min_dt:
                    raise PathFailure(f"t-step fell below {cfg.min_dt:g} at t={t:.6g}: {exc}", rep) from None
                continue
            w = u.values.copy()
            rep.steps.append({"t": tn, "sweeps": sweeps, "fixed_point_gap": gap, "dt": tn - t,
                              "min_u": float(np.min(w)), "max_u": float(np.max(w))})
            t = tn
            dt = min(1.5 * dt, 0.5)
        slack = 10 * grid.h**2
        lo, hi = math.log(cfg.r1) - slack, math.log(cfg.r2) + slack
        if np.min(u.values) < lo or np.max(u.values) > hi:
            raise BarrierViolation(
                f"final u in [{np.min(u.values):.6g}, {np.max(u.values):.6g}] "
                f"outside [{lo:.6g}, {hi:.6g}]", rep
            )
    except SolverError as exc:
        rep.converged = False
        rep.failure_reason = str(exc)
        rep.wall_time = time.perf_counter() - t0
        exc.report = rep
        raise
    r = residual_direct(u, K, form="log")
    rep.residuals = {"log_direct": float(np.max(np.abs(r))),
                     "raw_direct": float(np.max(np.abs(residual_direct(u, K))))}
    for fl in K.flags():
        rep.warn(fl)
    rep.converged = True
    direct = DirectProblem(grid, K)
    mon = monitor_bounds(u, direct)
    mon["c0_window"] = [math.log(cfg.r1), math.log(cfg.r2)]
    mon["c0_bound_satisfied"] = bool(
        np.min(u.values) >= math.log(cfg.r1) - 10 * grid.h**2
        and np.max(u.values) <= math.log(cfg.r2) + 10 * grid.h**2
    )
    rep.monitors.append(mon)
    rep.wall_time = time.perf_counter() - t0
    return u, rep


def _fixed_point(grid, K, w, t, cfg, rep):
    gaps = []
    for k in range(cfg.max_sweeps):
        inner = Theorem4Inner(grid, K, w, t)
        Hw, _ = newton_solve(inner, ScalarField(w, grid), cfg, rep)
        gap = float(np.max(np.abs(Hw.values - w)))
        gaps.append(gap)
        rep.sweeps.append({"t": t, "sweep": k + 1, "gap": gap})
        if gap <= cfg.tol:
            return Hw, k + 1, gap
        s = cfg.stall_sweeps
        if len(gaps) > s and gaps[-1] >= gaps[-1 - s]:
            raise FixedPointStall(
                f"no contraction over {s} sweeps at t={t:.6g} (gap {gap:.3e})", rep
            )
        w = (1 - cfg.sigma) * w + cfg.sigma * Hw.values
    raise FixedPointStall(f"{cfg.max_sweeps} sweeps without convergence at t={t:.6g}", rep)


# --------------------------------------------------------------------------
# monitors and probes


def monitor_bounds(u: ScalarField, problem: Optional[_Problem] = None, omega: bool = False) -> dict:
    """Runtime checks of the a priori estimates.

    Records ``osc u``; the gradient sums against ``e^(2 osc u) - 1`` (a
    violation only counts when ``u`` is admissible); the band quantity
    ``n + m - 1 + |Du|^2 - Delta u`` against
    ``C1 = (n+m-1) (min F)^(1/(n+m-1))`` with tolerance ``10 h^2``; the C0
    window of the mode; the largest mixed Hessian entry; and optionally a
    ``G'``-weighted third-derivative norm. Never raises on a failed check.
    """
    grid = u.grid
    n, m = grid.n, grid.m
    D = covariant_hessian(u)
    v = u.values
    osc = float(np.ptp(v))
    bound = math.expm1(2 * osc)
    gh2 = float(np.max(D.horizontal_norm2())) if n else 0.0
    gv2 = float(np.max(D.vertical_norm2()))
    adm = admissible_tensor(u)
    lemma1 = max(gh2, gv2) <= bound * (1 + 1e-12) + 1e-28
    trace_h = np.einsum("iin->n", D.hess_h) if n else 0.0
    grad2 = D.vertical_norm2() + (D.horizontal_norm2() if n else 0.0)
    band = (n + m - 1) + grad2 - (trace_h + np.einsum("aan->n", D.hess_v))
    rec = {
        "osc": osc,
        "grad_h_max": gh2,
        "grad_v_max": gv2,
        "lemma1_bound": bound,
        "admissible": adm.admissible,
        "admissibility_margin": adm.margin if math.isfinite(adm.margin) else None,
        "lemma1_holds": bool(lemma1),
        "lemma1_violation": bool(adm.admissible and not lemma1),
        "band_min": float(np.min(band)),
        "band_max": float(np.max(band)),
        "mixed_max": float(np.max(np.abs(D.mixed))) if n else 0.0,
    }
    if problem is not None:
        F = problem.lemma2_F(u)
        k = n + m - 1
        Fmin = float(np.min(F))
        C1 = k * Fmin ** (1.0 / k) if Fmin > 0 else float("nan")
        rec["lemma2_C1"] = C1
        rec["lemma2_holds"] = bool(np.min(band) >= C1 - 10 * grid.h**2)
        win = problem.c0_window()
        if win is not None:
            slack = 10 * grid.h**2
            rec["c0_window"] = list(win)
            rec["c0_bound_satisfied"] = bool(np.min(v) >= win[0] - slack and np.max(v) <= win[1] + slack)
    if omega:
        rec["omega"] = _omega(u, D)
    return rec


def _omega(u: ScalarField, D) -> float:
    grid = u.grid
    T = vertical_third_derivative(u)
    _, _, _, Gi = _block(D.grad_v, D.hess_v)
    val = np.einsum("adn,ben,cfn,abcn,defn->n", Gi, Gi, Gi, T, T)
    if grid.n:
        _, _, _, Hi = _block(D.grad_h, D.hess_h)
        n = grid.n
        Th = np.empty((n, n, n, grid.size))
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    Th[i, j, k] = grid.Dh[i] @ D.hess_h[j, k]
        val = val + np.einsum("adn,ben,cfn,abcn,defn->n", Hi, Hi, Hi, Th, Th)
    return float(np.sqrt(np.max(np.abs(val))))


def uniqueness_probe(problem: _Problem, u0a: ScalarField, u0b: ScalarField,
                     cfg: SolverConfig, parallel: bool = True, return_solutions: bool = False):
    """Solve the same problem from two starts and compare.

    Returns
    -------
    float
        ``||u^a - u^b||_inf``; with ``return_solutions`` also both fields.
    """
    for u0 in (u0a, u0b):
        if not admissible_tensor(u0).admissible:
            raise AdmissibilityLoss("uniqueness probe start is not admissible")
    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fa = pool.submit(problem.solve, u0a, cfg)
            fb = pool.submit(problem.solve, u0b, cfg)
            ua, _ = fa.result()
            ub, _ = fb.result()
    else:
        ua, _ = problem.solve(u0a, cfg)
        ub, _ = problem.solve(u0b, cfg)
    gap = float(np.max(np.abs(ua.values - ub.values)))
    return (gap, ua, ub) if return_solutions else gap
