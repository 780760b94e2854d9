"""Nonlinear curvature operators, residuals and their linearisations.

Notation: ``g`` is the vertical gradient ``D_alpha u``, ``G'`` is the
admissibility tensor ``I + Du Du^T - D^2 u`` restricted to the horizontal
and vertical blocks, ``N1`` and ``N2`` are the determinants of those
blocks. Every residual exists in two forms, ``raw`` (a determinant
difference) and ``log`` (the one Newton works with).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.sparse as sp

from . import kernels
from .curvature import CurvatureSpec
from .errors import SingularLinearization
from .geometry import BundleGrid, FrameDerivatives, ScalarField, covariant_hessian

__all__ = [
    "SINGULAR_TOL",
    "AdmissibleTensor",
    "FieldOperator",
    "admissible_tensor",
    "n1_operator",
    "n2_operator",
    "vertical_gauss_curvature",
    "residual_direct",
    "residual_theorem3",
    "residual_theorem4",
    "linearize_vertical",
    "linearize_horizontal",
    "log_concavity_probe",
]

SINGULAR_TOL = 1e-12


def _hessian_blocks(u: ScalarField):
    """Frame derivatives with only the blocks the operators use."""
    grid = u.grid
    v = u.values
    gv, Hv = grid.vertical_derivatives(v)
    n = grid.n
    gh = np.stack([D @ v for D in grid.Dh]) if n else np.zeros((0, v.size))
    Hh = np.zeros((n, n, v.size))
    for i in range(n):
        for j in range(i, n):
            Hh[i, j] = Hh[j, i] = grid.Hh[i][j] @ v
    return FrameDerivatives(gh, gv, Hh, Hv, None, mu=grid.mu)


def _block(g: np.ndarray, H: np.ndarray):
    """Entries of ``I + g g^T - H``, its determinant, min eigenvalue and inverse."""
    k = g.shape[0]
    N = g.shape[1]
    if k == 0:
        one = np.ones(N)
        return np.zeros((0, 0, N)), one, np.full(N, np.inf), np.zeros((0, 0, N))
    if k == 1:
        a = 1.0 + g[0] ** 2 - H[0, 0]
        with np.errstate(divide="ignore"):
            inv = 1.0 / a
        return a[None, None], a, a, inv[None, None]
    a11, a12, a22, det, mine = kernels.block2(g[0], g[1], H[0, 0], H[0, 1], H[1, 1])
    A = np.empty((2, 2, N))
    A[0, 0], A[0, 1], A[1, 0], A[1, 1] = a11, a12, a12, a22
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.empty_like(A)
        inv[0, 0], inv[1, 1] = a22 / det, a11 / det
        inv[0, 1] = inv[1, 0] = -a12 / det
    return A, det, mine, inv


@dataclass(frozen=True, eq=False)
class AdmissibleTensor:
    """Horizontal and vertical blocks of ``G'_u`` with their minimum eigenvalues.

    ``min_eig_horizontal`` is ``+inf`` everywhere when the base is a point.
    """

    horizontal: np.ndarray
    vertical: np.ndarray
    min_eig_horizontal: np.ndarray
    min_eig_vertical: np.ndarray

    @property
    def margin(self) -> float:
        """Smallest block eigenvalue over all nodes."""
        return float(min(np.min(self.min_eig_horizontal), np.min(self.min_eig_vertical)))

    @property
    def admissible(self) -> bool:
        return self.margin > 0


def admissible_tensor(u: ScalarField) -> AdmissibleTensor:
    """Assemble both diagonal blocks of ``G'_u`` and their smallest eigenvalues."""
    D = _hessian_blocks(u)
    Ah, _, mh, _ = _block(D.grad_h, D.hess_h)
    Av, _, mv, _ = _block(D.grad_v, D.hess_v)
    return AdmissibleTensor(Ah, Av, mh, mv)


def n1_operator(u: ScalarField) -> np.ndarray:
    """Determinant of the horizontal block (identically 1 when n = 0)."""
    D = _hessian_blocks(u)
    return _block(D.grad_h, D.hess_h)[1]


def n2_operator(u: ScalarField) -> np.ndarray:
    """Determinant of the vertical block of ``G'_u``."""
    D = _hessian_blocks(u)
    return _block(D.grad_v, D.hess_v)[1]


def vertical_gauss_curvature(u: ScalarField) -> np.ndarray:
    """Vertical Gaussian curvature of the radial graph ``e^u xi`` at each node."""
    D = _hessian_blocks(u)
    m = u.grid.m
    n2 = _block(D.grad_v, D.hess_v)[1]
    q = 1.0 + D.vertical_norm2()
    return q ** (-(m + 1) / 2) * np.exp(-(m - 1) * u.values) * n2


def _safe_log(x):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), np.nan)


def residual_direct(u: ScalarField, K: CurvatureSpec, form: str = "raw") -> np.ndarray:
    """Residual of the prescribed vertical curvature equation.

    ``raw``: ``N2 - (1+|D^v u|^2)^((m+1)/2) e^((m-1)u) K(e^u xi)``.
    ``log``: ``log N2 - (m+1)/2 log(1+|D^v u|^2) - (m-1)u - log K``, NaN
    where ``N2 <= 0``.
    """
    grid = u.grid
    m = grid.m
    D = _hessian_blocks(u)
    n2 = _block(D.grad_v, D.hess_v)[1]
    q = 1.0 + D.vertical_norm2()
    Kv = K.evaluate(grid, np.exp(u.values))
    if form == "log":
        return _safe_log(n2) - 0.5 * (m + 1) * np.log(q) - (m - 1) * u.values - np.log(Kv)
    return n2 - q ** ((m + 1) / 2) * np.exp((m - 1) * u.values) * Kv


def residual_theorem3(u: ScalarField, f: CurvatureSpec, lam: float, t: float,
                      form: str = "raw") -> Tuple[np.ndarray, np.ndarray]:
    """Residual pair of the lambda-regularised continuity family.

    ``raw``: ``(N1 - 1, N2 - e^(-lam u) [f (1+|D^v u|^2)^((m+1)/2)]^t)``.
    ``log``: ``(log N1, log N2 + lam u - t log f - t (m+1)/2 log(1+|D^v u|^2))``.
    """
    grid = u.grid
    m = grid.m
    D = _hessian_blocks(u)
    n1 = _block(D.grad_h, D.hess_h)[1]
    n2 = _block(D.grad_v, D.hess_v)[1]
    q = 1.0 + D.vertical_norm2()
    fv = f.base_values(grid)
    if form == "log":
        r2 = _safe_log(n2) + lam * u.values - t * (np.log(fv) + 0.5 * (m + 1) * np.log(q))
        return _safe_log(n1), r2
    return n1 - 1.0, n2 - np.exp(-lam * u.values) * (fv * q ** ((m + 1) / 2)) ** t


def residual_theorem4(u: ScalarField, w: ScalarField, K: CurvatureSpec, t: float,
                      form: str = "raw") -> Tuple[np.ndarray, np.ndarray]:
    """Residual pair of the frozen-coefficient problem defining ``H_t w``.

    ``raw``: ``(N1 - 1, N2 - e^(-u) [e^(m w) K(e^w xi)]^t (1+|D^v u|^2)^((m+1)/2))``.
    ``log``: ``(log N1, log N2 + u - t (m w + log K(e^w xi)) - (m+1)/2 log(1+|D^v u|^2))``.
    """
    grid = u.grid
    m = grid.m
    D = _hessian_blocks(u)
    n1 = _block(D.grad_h, D.hess_h)[1]
    n2 = _block(D.grad_v, D.hess_v)[1]
    q = 1.0 + D.vertical_norm2()
    wv = w.values
    Kw = K.evaluate(grid, np.exp(wv))
    if form == "log":
        r2 = _safe_log(n2) + u.values - t * (m * wv + np.log(Kw)) - 0.5 * (m + 1) * np.log(q)
        return _safe_log(n1), r2
    return n1 - 1.0, n2 - np.exp(-u.values) * (np.exp(m * wv) * Kw) ** t * q ** ((m + 1) / 2)


class FieldOperator:
    """A sparse linear operator on nodal fields of one grid."""

    def __init__(self, matrix: sp.spmatrix, grid: BundleGrid):
        self.matrix = sp.csr_matrix(matrix)
        self.grid = grid

    def __call__(self, w) -> np.ndarray:
        if isinstance(w, ScalarField):
            w = w.values
        return self.matrix @ np.asarray(w, dtype=float)

    def __add__(self, other):
        other = other.matrix if isinstance(other, FieldOperator) else other
        return FieldOperator(self.matrix + other, self.grid)

    def __sub__(self, other):
        other = other.matrix if isinstance(other, FieldOperator) else other
        return FieldOperator(self.matrix - other, self.grid)


def _block_linearization(g, Ginv, Dops, Hops, N) -> sp.csr_matrix:
    # G'^{ab} (2 g_a D_b w - D_ab w)
    k = g.shape[0]
    L = sp.csr_matrix((N, N))
    for a in range(k):
        for b in range(k):
            L = L + sp.diags(Ginv[a, b]) @ (sp.diags(2 * g[a]) @ Dops[b] - Hops[a][b])
    return L


def linearize_vertical(u: ScalarField, lam: float = 0.0, t: float = 1.0) -> FieldOperator:
    """Derivative of the log-form vertical residual family.

    Applies ``w -> G'^{ab}(2 D_a u D_b w - D_ab w) + lam w
    - t (m+1) D^a u D_a w / (1 + |D^v u|^2)`` with indices over the
    vertical block. This is the exact Jacobian of
    ``log N2 + lam u - t log[f (1+|D^v u|^2)^((m+1)/2)]`` for fixed ``f``.

    Raises
    ------
    SingularLinearization
        If the vertical block has an eigenvalue ``<= 1e-12`` somewhere.
    """
    grid = u.grid
    D = _hessian_blocks(u)
    _, _, mine, Ginv = _block(D.grad_v, D.hess_v)
    if np.min(mine) <= SINGULAR_TOL:
        raise SingularLinearization(
            f"vertical block is not positive definite (min eigenvalue {np.min(mine):.3e})"
        )
    N = grid.size
    g = D.grad_v
    L = _block_linearization(g, Ginv, grid.Dv, grid.Hv, N)
    coef = t * (grid.m + 1) / (1.0 + D.vertical_norm2())
    for a in range(grid.d):
        L = L - sp.diags(coef * g[a]) @ grid.Dv[a]
    if lam:
        L = L + lam * sp.identity(N, format="csr")
    return FieldOperator(L, grid)


def linearize_horizontal(u: ScalarField) -> FieldOperator:
    """Derivative of ``log N1``: ``w -> G'^{ij}(2 D_i u D_j w - D_ij w)``.

    The zero operator when the base is a point.
    """
    grid = u.grid
    N = grid.size
    if grid.n == 0:
        return FieldOperator(sp.csr_matrix((N, N)), grid)
    D = _hessian_blocks(u)
    _, _, mine, Ginv = _block(D.grad_h, D.hess_h)
    if np.min(mine) <= SINGULAR_TOL:
        raise SingularLinearization(
            f"horizontal block is not positive definite (min eigenvalue {np.min(mine):.3e})"
        )
    return FieldOperator(_block_linearization(D.grad_h, Ginv, grid.Dh, grid.Hh, N), grid)


def log_concavity_probe(u0: ScalarField, u1: ScalarField, samples: int = 11) -> dict:
    """Second differences of ``log N2`` along the segment from ``u0`` to ``u1``.

    ``log det`` is concave on the positive cone, but ``N2`` also carries the
    quadratic term ``g g^T``, so along a segment the exact second
    derivative is bounded by ``2 dg^T G'^{-1} dg`` (with ``dg`` the change
    of the vertical gradient) rather than by 0. Both comparisons are
    returned.

    Returns
    -------
    dict
        ``s``, ``log_n2`` (samples x N), ``second_difference``
        (divided by ``ds^2``), ``bound``, ``max_second_difference``,
        ``concave`` and ``within_bound``.
    """
    grid = u0.grid
    s = np.linspace(0.0, 1.0, samples)
    ds = s[1] - s[0]
    dg, _ = grid.vertical_derivatives(u1.values - u0.values)
    logs, bounds = [], []
    for si in s:
        us = ScalarField((1 - si) * u0.values + si * u1.values, grid)
        D = _hessian_blocks(us)
        _, det, mine, Ginv = _block(D.grad_v, D.hess_v)
        if np.min(mine) <= 0:
            raise SingularLinearization(f"segment leaves the admissible cone at s={si:.3f}")
        logs.append(np.log(det))
        bounds.append(2 * np.einsum("an,abn,bn->n", dg, Ginv, dg))
    logs = np.array(logs)
    bounds = np.array(bounds)
    sec = (logs[2:] - 2 * logs[1:-1] + logs[:-2]) / ds**2
    local = np.maximum(np.maximum(bounds[2:], bounds[1:-1]), bounds[:-2])
    tol = 1e-8 * (1 + np.abs(sec))
    return {
        "s": s,
        "log_n2": logs,
        "second_difference": sec,
        "bound": local,
        "max_second_difference": float(np.max(sec)),
        "concave": bool(np.all(sec <= 1e-10)),
        "within_bound": bool(np.all(sec <= local * (1 + 0.05) + tol)),
    }
