"""Closed-form oracles, an independent discrete curvature and refinement studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import sympy
from scipy.optimize import bisect

from .curvature import CurvatureSpec
from .errors import CurvatureError, DegenerateMesh, NoBracket
from .geometry import (
    BundleGrid,
    ScalarField,
    build_bundle_grid,
    covariant_gradient,
    covariant_hessian,
    vertical_third_derivative,
)

__all__ = [
    "theorem1_oracle",
    "RadiusResult",
    "theorem2_radius",
    "EmbeddedMesh",
    "embed_and_measure",
    "TestField",
    "seeded_test_fields",
    "structure_identity_suite",
    "ConvergenceResult",
    "convergence_study",
    "restrict",
    "manufactured_curvature",
]


# --------------------------------------------------------------------------
# closed-form oracles


def theorem1_oracle(kappa, grid: BundleGrid) -> ScalarField:
    """Exact solution ``u = -log(kappa o pi) / (m - 1)`` for fibre-constant curvature.

    Parameters
    ----------
    kappa : float, str, callable or CurvatureSpec
        Positive base function: a constant, an expression in ``x``/``y``,
        a callable of base coordinates ``(N, n)``, or a radius-free spec.
    grid : BundleGrid

    Returns
    -------
    ScalarField
        Constant along every fibre.
    """
    if isinstance(kappa, CurvatureSpec):
        vals = kappa.base_values(grid)
    elif isinstance(kappa, str):
        vals = CurvatureSpec.fiber_constant(kappa).base_values(grid)
    elif callable(kappa):
        vals = np.broadcast_to(np.asarray(kappa(grid.base.coords), dtype=float), (grid.base.size,))
        vals = vals[grid.base_index]
    else:
        vals = np.full(grid.size, float(kappa))
    if not np.all(np.isfinite(vals)) or np.any(vals <= 0):
        raise CurvatureError("kappa must be strictly positive on the base grid")
    return ScalarField(-np.log(vals) / (grid.m - 1), grid)


@dataclass
class RadiusResult:
    """Root of ``psi(r) = r^(m-1) K(r) = 1``."""

    radius: float
    degenerate: bool
    bracket: tuple
    psi_a: float
    psi_b: float
    psi_root: float
    evaluations: int


def theorem2_radius(K: CurvatureSpec, m: int, bracket: Sequence[float] = (1e-3, 1e3),
                    rtol: float = 1e-12) -> RadiusResult:
    """Bisection for the sphere radius of a radial curvature.

    ``psi(r) = r^(m-1) K(r)``; the returned radius satisfies
    ``psi(r) = 1`` to relative ``rtol`` in ``r``. When ``psi = 1`` on the
    whole bracket (homothety-invariant ``K``) the midpoint is returned
    with ``degenerate=True``.

    Raises
    ------
    NoBracket
        If ``psi - 1`` has the same strict sign at both ends.
    """
    a, b = (float(bracket[0]), float(bracket[1]))
    if not 0 < a < b:
        raise NoBracket(f"bracket must satisfy 0 < a < b, got {bracket}")
    count = [0]

    def psi(r):
        count[0] += 1
        return float(r ** (m - 1) * K.radial_profile(np.array([r]))[0])

    pa, pb = psi(a), psi(b)
    probe = np.geomspace(a, b, 7)
    flat = all(abs(psi(r) - 1) <= 1e-12 for r in probe)
    if flat:
        mid = math.sqrt(a * b)
        return RadiusResult(mid, True, (a, b), pa, pb, psi(mid), count[0])
    if (pa - 1) * (pb - 1) > 0:
        raise NoBracket(f"psi - 1 has the same sign at both ends: psi({a:g})={pa:.6g}, psi({b:g})={pb:.6g}")
    if pa == 1:
        root = a
    elif pb == 1:
        root = b
    else:
        s = bisect(lambda x: psi(math.exp(x)) - 1, math.log(a), math.log(b),
                   xtol=1e-300, rtol=rtol / 4, maxiter=400)
        root = math.exp(s)
    return RadiusResult(root, False, (a, b), pa, pb, psi(root), count[0])


# --------------------------------------------------------------------------
# independent curvature of the embedded fibre


@dataclass
class EmbeddedMesh:
    """The fibre ``Y_x = {e^u xi}`` over one base node.

    ``cells`` holds segments ``(k, k+1)`` for d=1 and counter-clockwise
    (outward) triangles for d=2. ``excluded`` lists the pole-adjacent
    vertices left out of tolerance checks.
    """

    vertices: np.ndarray
    cells: np.ndarray
    d: int
    base_node: int
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def boundary_edges(self) -> int:
        """Number of edges not shared by exactly two cells (0 when closed)."""
        if self.d == 1:
            deg = np.bincount(self.cells.ravel(), minlength=len(self.vertices))
            return int(np.sum(deg != 2))
        e = np.sort(np.concatenate([self.cells[:, [0, 1]], self.cells[:, [1, 2]], self.cells[:, [2, 0]]]), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return int(np.sum(counts != 2))

    def signed_volume(self) -> float:
        """Enclosed signed area (d=1) or volume (d=2); positive when outward oriented."""
        V = self.vertices
        if self.d == 1:
            p, q = V[self.cells[:, 0]], V[self.cells[:, 1]]
            return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - p[:, 1] * q[:, 0]))
        a, b, c = V[self.cells[:, 0]], V[self.cells[:, 1]], V[self.cells[:, 2]]
        return float(np.sum(np.einsum("ij,ij->i", a, np.cross(b, c)))) / 6.0


def sphere_triangles(Np: int, Nt: int) -> np.ndarray:
    """Outward triangles of the lat-long grid with fanned polar caps."""
    idx = np.arange(Np * Nt).reshape(Np, Nt)
    tris = []
    for j in range(Np - 1):
        for k in range(Nt):
            a, b = idx[j, k], idx[j, (k + 1) % Nt]
            c, dd = idx[j + 1, k], idx[j + 1, (k + 1) % Nt]
            tris.append((a, c, dd))
            tris.append((a, dd, b))
    top, bot = idx[0], idx[-1]
    for k in range(1, Nt - 1):
        tris.append((top[0], top[k], top[k + 1]))
        tris.append((bot[0], bot[k + 1], bot[k]))
    return np.array(tris, dtype=int)


def _menger(V: np.ndarray) -> np.ndarray:
    p0 = np.roll(V, 1, axis=0)
    p2 = np.roll(V, -1, axis=0)
    u = V - p0
    w = p2 - V
    a = np.linalg.norm(u, axis=1)
    b = np.linalg.norm(w, axis=1)
    c = np.linalg.norm(p2 - p0, axis=1)
    bad = np.flatnonzero((a <= 1e-300) | (b <= 1e-300) | (c <= 1e-300))
    if bad.size:
        raise DegenerateMesh(f"coincident curve vertices at {bad.tolist()}", bad)
    cross = u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]
    return 2.0 * cross / (a * b * c)


def _angle_defect(V: np.ndarray, T: np.ndarray) -> np.ndarray:
    P = [V[T[:, i]] for i in range(3)]
    E = [P[(i + 2) % 3] - P[(i + 1) % 3] for i in range(3)]  # edge opposite corner i
    area2 = np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0]), axis=1)
    scale = max(np.max(np.abs(V)), 1e-300)
    bad = np.flatnonzero(area2 <= 1e-14 * scale**2)
    if bad.size:
        raise DegenerateMesh(f"zero-area faces at {bad.tolist()}", bad)
    ang = []
    for i in range(3):
        x = P[(i + 1) % 3] - P[i]
        y = P[(i + 2) % 3] - P[i]
        ang.append(np.arctan2(np.linalg.norm(np.cross(x, y), axis=1), np.einsum("ij,ij->i", x, y)))
    ang = np.array(ang)  # (3, F)
    nv = len(V)
    angle_sum = np.zeros(nv)
    area = np.zeros(nv)
    obtuse = np.max(ang, axis=0) > np.pi / 2
    cot = 1.0 / np.tan(ang)
    sq = [np.einsum("ij,ij->i", e, e) for e in E]
    for i in range(3):
        np.add.at(angle_sum, T[:, i], ang[i])
        j, k = (i + 1) % 3, (i + 2) % 3
        # Voronoi share of corner i: edges i-j (opposite k) and i-k (opposite j)
        vor = (sq[k] * cot[k] + sq[j] * cot[j]) / 8.0
        tri_area = 0.5 * area2
        mixed = np.where(obtuse, np.where(ang[i] > np.pi / 2, tri_area / 2, tri_area / 4), vor)
        np.add.at(area, T[:, i], mixed)
    return (2 * np.pi - angle_sum) / area


def embed_and_measure(u: ScalarField, base_node: int = 0):
    """Embed one fibre of the radial graph and measure its curvature directly.

    The curve (d=1) uses the signed circumscribed-circle curvature of
    consecutive vertex triples; the surface (d=2) uses the angle defect
    over the mixed Voronoi area. Neither uses the frame derivatives.

    Returns
    -------
    (EmbeddedMesh, ndarray)
        Mesh and per-vertex curvature. For d=2 the pole-adjacent rings are
        listed in ``mesh.excluded``.

    Raises
    ------
    DegenerateMesh
    """
    grid = u.grid
    Nf = grid.fiber.size
    if not 0 <= base_node < grid.base.size:
        raise IndexError(f"base node {base_node} out of range")
    vals = u.values[base_node * Nf:(base_node + 1) * Nf]
    V = np.exp(vals)[:, None] * grid.fiber.directions
    if grid.d == 1:
        cells = np.column_stack([np.arange(Nf), (np.arange(Nf) + 1) % Nf])
        mesh = EmbeddedMesh(V, cells, 1, base_node)
        return mesh, _menger(V)
    Np, Nt = grid.fiber.shape
    T = sphere_triangles(Np, Nt)
    mesh = EmbeddedMesh(V, T, 2, base_node, grid.fiber.pole_rows.copy())
    return mesh, _angle_defect(V, T)


# --------------------------------------------------------------------------
# structure identities


class TestField:
    """Smooth analytic field on the bundle, evaluable at any ambient point.

    ``u(x, xi) = sum_k c_k P_k(xi / |xi|) b_k(x)`` with low-degree
    polynomials ``P_k`` in the unit direction and trigonometric base
    factors, so the radially constant extension is exact.
    """

    __test__ = False

    def __init__(self, n: int, d: int, coeffs: np.ndarray, phases: np.ndarray, name: str = ""):
        self.n, self.d = n, d
        self.c = np.asarray(coeffs, dtype=float)
        self.p = np.asarray(phases, dtype=float)
        self.name = name

    def __call__(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        y = xi / np.linalg.norm(xi, axis=1, keepdims=True)
        c = self.c
        last = y[:, -1]
        val = c[0] * y[:, 0] + c[1] * y[:, 1] + c[2] * y[:, 0] * y[:, 1] + c[3] * last**2
        if self.d == 2:
            val = val + c[4] * y[:, 0] * y[:, 2] + c[5] * y[:, 1] ** 3
        if self.n >= 1:
            val = val + c[6] * np.cos(x[:, 0] + self.p[0]) * (1 + 0.5 * y[:, 0])
        if self.n >= 2:
            val = val + c[7] * np.sin(x[:, 1] + self.p[1]) * y[:, 1]
        return val

    def on(self, grid: BundleGrid) -> ScalarField:
        return ScalarField(self(grid.x, grid.directions), grid)


def seeded_test_fields(n: int, d: int, count: int = 5, seed: int = 42, amplitude: float = 0.3) -> list:
    """The fixed seeded set of smooth test fields used by the identity suite."""
    rng = np.random.default_rng(seed)
    out = []
    for k in range(count):
        c = amplitude * rng.uniform(-1, 1, size=8)
        p = rng.uniform(0, 2 * np.pi, size=2)
        out.append(TestField(n, d, c, p, name=f"field{k}"))
    return out


def _ambient_frame_derivative(field_fn, grid: BundleGrid, rho: float, eps: float = 1e-5):
    """Frame gradient of the radial extension at radius ``rho`` by ambient differences."""
    x = grid.x
    Y = rho * grid.directions
    frame = grid.fiber.frame[grid.fiber_index]  # (N, d, m)
    out_v = np.empty((grid.d, grid.size))
    for a in range(grid.d):
        e = frame[:, a]
        out_v[a] = (field_fn(x, Y + eps * e) - field_fn(x, Y - eps * e)) / (2 * eps)
    out_h = np.empty((grid.n, grid.size))
    G = grid.connection[grid.base_index]
    for i in range(grid.n):
        # horizontal lift: move x along axis i while transporting y by -A_i y
        V = np.einsum("nba,na->nb", G[:, i], Y)
        step = np.zeros_like(x)
        step[:, i] = eps
        out_h[i] = (field_fn(x + step, Y - eps * V) - field_fn(x - step, Y + eps * V)) / (2 * eps)
    return out_h, out_v


def structure_identity_suite(grid: BundleGrid, fields: Optional[list] = None, seed: int = 42,
                             radii: Sequence[float] = (0.5, 2.0), band: float = np.pi / 4) -> dict:
    """Check the frame structure relations on smooth test fields.

    Reports, as maxima over the test fields:

    ``curvature_commutator``
        ``|D^3u(1,2,c) - D^3u(2,1,c) + R(e1,e2,e_c) . Du|`` for the round
        2-sphere (0 for d=1), measured on ``|latitude| < band``;
        ``curvature_commutator_full`` is the same over all nodes.
    ``mixed_commutator``
        ``|D_{i alpha} u - D_alpha(D_i u)|``.
    ``horizontal_commutator``
        ``|e_i e_j u - e_j e_i u|`` (n = 2).
    ``homogeneity``
        ``|D_a u(rho xi) - rho^(mu_a - 1) D_a u(xi)|`` with the left side
        taken by ambient differences of the radial extension, over
        ``radii``; measured on the same band.
    """
    fields = fields if fields is not None else seeded_test_fields(grid.n, grid.d, seed=seed)
    mask = grid.fiber.band_mask(band)[grid.fiber_index] if grid.d == 2 else np.ones(grid.size, bool)
    out = {"curvature_commutator": 0.0, "curvature_commutator_full": 0.0, "mixed_commutator": 0.0,
           "horizontal_commutator": 0.0, "homogeneity": 0.0, "fields": len(fields)}
    for fld in fields:
        u = fld.on(grid) if isinstance(fld, TestField) else fld
        D = covariant_hessian(u)
        if grid.d == 2:
            T = vertical_third_derivative(u)
            g = D.grad_v
            v1 = np.abs(T[0, 1, 0] - T[1, 0, 0] - g[1])
            v2 = np.abs(T[0, 1, 1] - T[1, 0, 1] + g[0])
            viol = np.maximum(v1, v2)
            out["curvature_commutator"] = max(out["curvature_commutator"], float(np.max(viol[mask])))
            out["curvature_commutator_full"] = max(out["curvature_commutator_full"], float(np.max(viol)))
        for i in range(grid.n):
            ehu = grid.Dh[i] @ u.values
            for a in range(grid.d):
                diff = np.abs(D.mixed[i, a] - grid.Dv[a] @ ehu)
                out["mixed_commutator"] = max(out["mixed_commutator"], float(np.max(diff)))
        if grid.n == 2:
            c = grid.Dh[0] @ (grid.Dh[1] @ u.values) - grid.Dh[1] @ (grid.Dh[0] @ u.values)
            out["horizontal_commutator"] = max(out["horizontal_commutator"], float(np.max(np.abs(c))))
        if isinstance(fld, TestField):
            for rho in radii:
                amb_h, amb_v = _ambient_frame_derivative(fld, grid, rho)
                errs = [np.abs(amb_v - D.grad_v / rho)]
                if grid.n:
                    errs.append(np.abs(amb_h - D.grad_h))
                e = max(float(np.max(x[:, mask])) for x in errs)
                out["homogeneity"] = max(out["homogeneity"], e)
    return out


# --------------------------------------------------------------------------
# refinement studies


def restrict(u: ScalarField, coarse: BundleGrid) -> np.ndarray:
    """Values of a fine-grid field at the nodes of a grid with half the resolution.

    Base and longitude nodes are nested; the colatitude nodes of the 2-sphere
    are not, so those are interpolated with 4-point cubic weights (with the
    across-pole reflection at the ends).
    """
    fine = u.grid
    arr = u.values.reshape(fine.shape)
    n = fine.n
    for ax in range(n):
        ratio = fine.base.shape[ax] // coarse.base.shape[ax]
        arr = np.take(arr, np.arange(0, fine.base.shape[ax], ratio), axis=ax)
    if fine.d == 1:
        ratio = fine.fiber.shape[0] // coarse.fiber.shape[0]
        arr = np.take(arr, np.arange(0, fine.fiber.shape[0], ratio), axis=n)
        return arr.reshape(-1)
    Npf, Ntf = fine.fiber.shape
    Npc, Ntc = coarse.fiber.shape
    if Npf != 2 * Npc:
        raise ValueError("colatitude resolution must double between levels")
    arr = np.take(arr, np.arange(0, Ntf, Ntf // Ntc), axis=n + 1)
    half = arr.shape[n + 1] // 2
    # pad two ghost rows at each pole by reflection
    top = np.roll(np.take(arr, [1, 0], axis=n), -half, axis=n + 1)
    bot = np.roll(np.take(arr, [Npf - 1, Npf - 2], axis=n), -half, axis=n + 1)
    pad = np.concatenate([top, arr, bot], axis=n)
    # coarse node j sits midway between fine rows 2j and 2j+1 (padded 2j+2, 2j+3)
    j = np.arange(Npc)
    w = (-1 / 16, 9 / 16, 9 / 16, -1 / 16)
    res = sum(wk * np.take(pad, 2 * j + 1 + k, axis=n) for k, wk in enumerate(w))
    return res.reshape(-1)


@dataclass
class ConvergenceResult:
    """Errors and observed orders over a refinement sequence.

    ``order`` is the least-squares slope of ``log error`` against
    ``log h``, or the string ``"exact"`` when every error is at round-off.
    """

    resolutions: list
    h: list
    errors: list
    orders: list
    order: object
    reference: str

    @property
    def exact(self) -> bool:
        return self.order == "exact"

    def within(self, target: float, tol: float) -> bool:
        if self.exact:
            return True
        return all(abs(o - target) <= tol for o in self.orders)


def _orders(hs, errs, roundoff):
    if all(e <= roundoff for e in errs):
        return [], "exact"
    orders = [math.log(errs[k] / errs[k + 1]) / math.log(hs[k] / hs[k + 1])
              for k in range(len(errs) - 1)]
    slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0]) if len(errs) > 1 else float("nan")
    return orders, slope


def convergence_study(solve: Callable, resolutions: Sequence, exact: Optional[Callable] = None,
                      mask: Optional[Callable] = None, roundoff: float = 1e-11) -> ConvergenceResult:
    """Observed order of a solver or diagnostic under grid refinement.

    Parameters
    ----------
    solve : callable
        ``solve(resolution)`` returns a :class:`ScalarField` (the computed
        solution) or a float (a scalar error metric).
    resolutions : sequence
        At least three levels, each halving the spacing of the previous one.
    exact : callable, optional
        ``exact(grid)`` gives nodal reference values. Without it, fields are
        compared level to level (coarse against restricted fine).
    mask : callable, optional
        ``mask(grid)`` selects the nodes entering the max norm.
    roundoff : float
        Errors at or below this are treated as exact.
    """
    if len(resolutions) < 3:
        raise ValueError("a convergence study needs at least three resolutions")
    results = [solve(r) for r in resolutions]
    if all(isinstance(x, (float, int, np.floating)) for x in results):
        hs = [1.0 / 2**k for k in range(len(results))]
        errs = [float(x) for x in results]
        orders, order = _orders(hs, errs, roundoff)
        return ConvergenceResult(list(resolutions), hs, errs, orders, order, "metric")
    grids = [x.grid for x in results]
    hs = [g.h for g in grids]
    if exact is not None:
        errs = []
        for x in results:
            diff = np.abs(x.values - exact(x.grid))
            if mask is not None:
                diff = diff[mask(x.grid)]
            errs.append(float(np.max(diff)))
        ref = "exact"
    else:
        errs = []
        for coarse, fine in zip(results[:-1], results[1:]):
            diff = np.abs(coarse.values - restrict(fine, coarse.grid))
            if mask is not None:
                diff = diff[mask(coarse.grid)]
            errs.append(float(np.max(diff)))
        hs = hs[:-1]
        ref = "successive"
    orders, order = _orders(hs, errs, roundoff)
    return ConvergenceResult(list(resolutions), hs, errs, orders, order, ref)


# --------------------------------------------------------------------------
# manufactured solutions


def _symbolic_gv(expr, d: int, m: int, phi, theta):
    """Vertical Gaussian curvature of ``u = expr`` on the round fibre, symbolically."""
    u = expr
    if d == 1:
        g = [sympy.diff(u, theta)]
        H = [[sympy.diff(u, theta, 2)]]
    else:
        s, c = sympy.sin(phi), sympy.cos(phi)
        up, ut = sympy.diff(u, phi), sympy.diff(u, theta)
        g = [up, ut / s]
        h12 = (sympy.diff(u, phi, theta) - c / s * ut) / s
        H = [[sympy.diff(u, phi, 2), h12], [h12, sympy.diff(u, theta, 2) / s**2 + c / s * up]]
    A = sympy.Matrix(d, d, lambda i, j: (1 if i == j else 0) + g[i] * g[j] - H[i][j])
    q = 1 + sum(gi**2 for gi in g)
    return A.det() * q ** (-sympy.Rational(m + 1, 2)) * sympy.exp(-(m - 1) * u)


def manufactured_curvature(u_star: str, n: int, d: int, power: Optional[float] = None):
    """Curvature whose exact solution is ``u_star``.

    ``K(x, xi) = G*(x, theta) (|xi| e^(-u*))^(-p)`` where ``G*`` is the
    vertical Gaussian curvature of ``u*`` computed symbolically; with the
    default ``p = m`` the linearised problem is coercive.

    Parameters
    ----------
    u_star : str
        Expression in ``theta`` (d=1) or ``phi, theta`` (d=2), optionally
        also ``x``/``y``.
    n, d : int

    Returns
    -------
    (CurvatureSpec, callable)
        The curvature and ``exact(grid)`` returning nodal ``u*``.
    """
    m = d + 1
    p = float(m if power is None else power)
    x1, x2, phi, theta = sympy.symbols("x y phi theta", real=True)
    expr = sympy.sympify(u_star.replace("^", "**"),
                         locals={"x": x1, "y": x2, "phi": phi, "theta": theta, "x1": x1, "x2": x2})
    gv = _symbolic_gv(expr, d, m, phi, theta)
    f_u = sympy.lambdify((x1, x2, phi, theta), expr, "numpy")
    f_g = sympy.lambdify((x1, x2, phi, theta), gv, "numpy")

    def unpack(x, a):
        N = a.shape[0]
        X = x[:, 0] if x.shape[1] >= 1 else np.zeros(N)
        Y = x[:, 1] if x.shape[1] >= 2 else np.zeros(N)
        P = a[:, 0] if d == 2 else np.zeros(N)
        T = a[:, -1]
        return X, Y, P, T

    def ustar(x, a):
        return np.broadcast_to(f_u(*unpack(x, a)), (a.shape[0],)).astype(float)

    def func(x, a, rho):
        us = ustar(x, a)
        G = np.broadcast_to(f_g(*unpack(x, a)), us.shape)
        return G * (rho * np.exp(-us)) ** (-p)

    spec = CurvatureSpec.from_callable(func, lambda x, a, r: np.full(np.shape(r), -p),
                                       name=f"manufactured({u_star})")
    spec.params = {"manufactured": u_star, "power": p}

    def exact(grid):
        return ustar(grid.x, grid.angles)

    return spec, exact
