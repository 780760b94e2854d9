"""Grids on the flat torus, the round fibre sphere and their product bundle.

Nodes of a :class:`BundleGrid` are stored row-major over
``base_shape + fiber_shape``; every nodal field is a flat vector in that
order. Frame derivatives are taken in the orthonormal frame made of the
horizontal lifts ``e_i`` of the base coordinate fields followed by the
orthonormal frame of the round fibre sphere (``e_theta`` for d=1,
``e_phi, e_theta`` for d=2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import GridError

__all__ = [
    "SphereGrid",
    "BaseGrid",
    "BundleGrid",
    "ScalarField",
    "FrameDerivatives",
    "build_bundle_grid",
    "covariant_gradient",
    "covariant_hessian",
    "radial_identity_check",
    "vertical_third_derivative",
]

ANTISYMMETRY_TOL = 1e-10
MIN_RES = 8


# --------------------------------------------------------------------------
# fibre sphere


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Uniform grid on the unit sphere ``S^d`` (d = 1 or 2).

    For d=1 the nodes are ``theta_k = 2 pi k / N``. For d=2 the nodes are
    ``phi_j = (j + 1/2) pi / Nphi`` and ``theta_k = 2 pi k / Ntheta`` so no
    node sits on a pole; ``Ntheta`` must be even for the across-pole
    reflection.
    """

    d: int
    shape: tuple
    theta: np.ndarray
    phi: Optional[np.ndarray]
    weights: np.ndarray
    htheta: float
    hphi: Optional[float]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> float:
        return self.htheta if self.hphi is None else max(self.htheta, self.hphi)

    @property
    def measure(self) -> float:
        return 2 * np.pi if self.d == 1 else 4 * np.pi

    @cached_property
    def angles(self) -> np.ndarray:
        """Node angles, shape ``(size, d)``; columns ``theta`` or ``phi, theta``."""
        if self.d == 1:
            return self.theta[:, None].copy()
        P, T = np.meshgrid(self.phi, self.theta, indexing="ij")
        return np.column_stack([P.ravel(), T.ravel()])

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit vectors of the nodes in the fibre, shape ``(size, d+1)``."""
        if self.d == 1:
            return np.column_stack([np.cos(self.theta), np.sin(self.theta)])
        p, t = self.angles.T
        return np.column_stack([np.sin(p) * np.cos(t), np.sin(p) * np.sin(t), np.cos(p)])

    @cached_property
    def frame(self) -> np.ndarray:
        """Orthonormal tangent frame at the nodes, shape ``(size, d, d+1)``."""
        if self.d == 1:
            t = self.theta
            return np.stack([-np.sin(t), np.cos(t)], axis=-1)[:, None, :]
        p, t = self.angles.T
        ephi = np.column_stack([np.cos(p) * np.cos(t), np.cos(p) * np.sin(t), -np.sin(p)])
        eth = np.column_stack([-np.sin(t), np.cos(t), np.zeros_like(t)])
        return np.stack([ephi, eth], axis=1)

    @cached_property
    def pole_rows(self) -> np.ndarray:
        """Flat indices of the two pole-adjacent rings (empty for d=1)."""
        if self.d == 1:
            return np.zeros(0, dtype=int)
        Np, Nt = self.shape
        return np.concatenate([np.arange(Nt), (Np - 1) * Nt + np.arange(Nt)])

    def band_mask(self, max_lat: float = np.pi / 4) -> np.ndarray:
        """Nodes with ``|pi/2 - phi| < max_lat`` (all nodes for d=1)."""
        if self.d == 1:
            return np.ones(self.size, dtype=bool)
        return np.abs(np.pi / 2 - self.angles[:, 0]) < max_lat

    # sparse frame operators on a single fibre --------------------------------

    @cached_property
    def _ops(self) -> dict:
        if self.d == 1:
            return _circle_ops(self.shape[0], self.htheta)
        return _sphere_ops(self.shape[0], self.shape[1], self.hphi, self.htheta, self.phi)


def _circulant(N: int, offsets: dict) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    idx = np.arange(N)
    for off, val in offsets.items():
        rows.append(idx)
        cols.append((idx + off) % N)
        vals.append(np.full(N, float(val)))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N, N)
    )


def _circle_ops(N: int, h: float) -> dict:
    D = _circulant(N, {1: 0.5 / h, -1: -0.5 / h})
    DD = _circulant(N, {1: 1 / h**2, 0: -2 / h**2, -1: 1 / h**2})
    return {"grad": [D], "hess": [[DD]]}


def _sphere_ops(Np: int, Nt: int, hphi: float, htheta: float, phi: np.ndarray) -> dict:
    half = Nt // 2
    J, K = np.meshgrid(np.arange(Np), np.arange(Nt), indexing="ij")
    J, K = J.ravel(), K.ravel()
    n = Np * Nt

    def node(j, k):
        # across-pole reflection: row -1 -> row 0 and row Np -> row Np-1,
        # both half a turn away in longitude
        k = np.where((j < 0) | (j >= Np), k + half, k) % Nt
        j = np.where(j < 0, 0, np.where(j >= Np, Np - 1, j))
        return j * Nt + k

    def stencil(terms):
        rows, cols, vals = [], [], []
        me = J * Nt + K
        for dj, dk, w in terms:
            rows.append(me)
            cols.append(node(J + dj, K + dk))
            vals.append(np.full(n, float(w)))
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
        )

    Dp = stencil([(1, 0, 0.5 / hphi), (-1, 0, -0.5 / hphi)])
    Dpp = stencil([(1, 0, 1 / hphi**2), (0, 0, -2 / hphi**2), (-1, 0, 1 / hphi**2)])
    Dt = stencil([(0, 1, 0.5 / htheta), (0, -1, -0.5 / htheta)])
    Dtt = stencil([(0, 1, 1 / htheta**2), (0, 0, -2 / htheta**2), (0, -1, 1 / htheta**2)])
    c = 0.25 / (hphi * htheta)
    Dpt = stencil([(1, 1, c), (1, -1, -c), (-1, 1, -c), (-1, -1, c)])

    s = np.sin(phi)[J]
    cot = (np.cos(phi) / np.sin(phi))[J]
    S1 = sp.diags(1 / s)
    G1 = Dp.tocsr()
    G2 = (S1 @ Dt).tocsr()
    H11 = Dpp.tocsr()
    H12 = (S1 @ (Dpt - sp.diags(cot) @ Dt)).tocsr()
    H22 = (sp.diags(1 / s**2) @ Dtt + sp.diags(cot) @ Dp).tocsr()
    return {"grad": [G1, G2], "hess": [[H11, H12], [H12, H22]]}


def _sphere_grid(d: int, res) -> SphereGrid:
    if d == 1:
        N = int(res if np.isscalar(res) else res[0])
        if N < MIN_RES:
            raise GridError(f"fiber_res must be >= {MIN_RES}, got {N}")
        h = 2 * np.pi / N
        theta = h * np.arange(N)
        return SphereGrid(1, (N,), theta, None, np.full(N, h), h, None)
    if np.isscalar(res):
        Np, Nt = int(res), 2 * int(res)
    else:
        Np, Nt = (int(r) for r in res)
    if Np < MIN_RES or Nt < MIN_RES:
        raise GridError(f"fiber_res must be >= {MIN_RES} per axis, got {(Np, Nt)}")
    if Nt % 2:
        raise GridError(f"the longitude count must be even, got {Nt}")
    hphi, htheta = np.pi / Np, 2 * np.pi / Nt
    phi = hphi * (np.arange(Np) + 0.5)
    theta = htheta * np.arange(Nt)
    edges = hphi * np.arange(Np + 1)
    ring = (np.cos(edges[:-1]) - np.cos(edges[1:])) * htheta
    weights = np.repeat(ring, Nt)
    return SphereGrid(2, (Np, Nt), theta, phi, weights, htheta, hphi)


# --------------------------------------------------------------------------
# base torus


@dataclass(frozen=True, eq=False)
class BaseGrid:
    """Uniform periodic grid on the flat torus ``(R / 2 pi Z)^n``; n=0 is a point."""

    n: int
    shape: tuple
    spacing: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape)) if self.n else 1

    @property
    def measure(self) -> float:
        return (2 * np.pi) ** self.n

    @cached_property
    def axes(self) -> list:
        return [h * np.arange(N) for N, h in zip(self.shape, self.spacing)]

    @cached_property
    def coords(self) -> np.ndarray:
        """Base node coordinates, shape ``(size, n)``."""
        if self.n == 0:
            return np.zeros((1, 0))
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def _base_grid(n: int, res) -> BaseGrid:
    if n == 0:
        return BaseGrid(0, (), ())
    res = [int(res)] * n if np.isscalar(res) else [int(r) for r in res]
    if len(res) != n:
        raise GridError(f"base_res needs {n} entries, got {len(res)}")
    if min(res) < MIN_RES:
        raise GridError(f"base_res must be >= {MIN_RES} per axis, got {tuple(res)}")
    return BaseGrid(n, tuple(res), tuple(2 * np.pi / N for N in res))


# --------------------------------------------------------------------------
# bundle


ConnectionLike = Union[None, np.ndarray, Callable[[np.ndarray], np.ndarray]]


@dataclass(frozen=True, eq=False)
class BundleGrid:
    """Product grid of the sphere bundle over a flat torus.

    Attributes
    ----------
    base, fiber
        Factor grids.
    mu : tuple of int
        Frame flags, 1 for the n horizontal indices then 0 for the d
        vertical ones.
    connection : ndarray, shape ``(B, n, m, m)``
        ``connection[b, i, beta, alpha]`` is the Christoffel symbol
        ``Gamma^beta_{i alpha}`` at base node ``b``.
    """

    base: BaseGrid
    fiber: SphereGrid
    mu: tuple
    connection: np.ndarray

    @property
    def n(self) -> int:
        return self.base.n

    @property
    def d(self) -> int:
        return self.fiber.d

    @property
    def m(self) -> int:
        return self.fiber.d + 1

    @property
    def shape(self) -> tuple:
        return self.base.shape + self.fiber.shape

    @property
    def size(self) -> int:
        return self.base.size * self.fiber.size

    @property
    def h(self) -> float:
        """Largest grid spacing over all axes (radians)."""
        return max((self.fiber.h,) + tuple(self.base.spacing))

    @cached_property
    def has_connection(self) -> bool:
        return bool(np.any(self.connection != 0))

    @cached_property
    def weights(self) -> np.ndarray:
        bw = np.full(self.base.size, float(np.prod(self.base.spacing)) if self.n else 1.0)
        return np.kron(bw, self.fiber.weights)

    @property
    def measure(self) -> float:
        return self.base.measure * self.fiber.measure

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def mean(self, values: np.ndarray) -> float:
        return self.integrate(values) / float(self.weights.sum())

    @cached_property
    def base_index(self) -> np.ndarray:
        """Base node of every bundle node."""
        return np.repeat(np.arange(self.base.size), self.fiber.size)

    @cached_property
    def fiber_index(self) -> np.ndarray:
        return np.tile(np.arange(self.fiber.size), self.base.size)

    @cached_property
    def x(self) -> np.ndarray:
        """Base coordinates per node, shape ``(size, n)``."""
        return self.base.coords[self.base_index]

    @cached_property
    def directions(self) -> np.ndarray:
        """Unit fibre direction per node, shape ``(size, m)``."""
        return self.fiber.directions[self.fiber_index]

    @cached_property
    def angles(self) -> np.ndarray:
        return self.fiber.angles[self.fiber_index]

    def node_coords(self) -> np.ndarray:
        """Coordinates per node: base ``x1..xn`` then fibre angles."""
        return np.column_stack([self.x, self.angles])

    def coord_names(self) -> list:
        names = [f"x{i + 1}" for i in range(self.n)]
        return names + (["theta"] if self.d == 1 else ["phi", "theta"])

    # sparse operators --------------------------------------------------------

    def _lift_fiber(self, op) -> sp.csr_matrix:
        if self.base.size == 1:
            return sp.csr_matrix(op)
        return sp.kron(sp.identity(self.base.size, format="csr"), op, format="csr")

    def _lift_base(self, op) -> sp.csr_matrix:
        return sp.kron(op, sp.identity(self.fiber.size, format="csr"), format="csr")

    @cached_property
    def Dv(self) -> list:
        """Vertical frame gradient operators ``D_alpha``."""
        return [self._lift_fiber(o) for o in self.fiber._ops["grad"]]

    @cached_property
    def Hv(self) -> list:
        """Vertical covariant Hessian operators ``D_alpha beta``."""
        return [[self._lift_fiber(o) for o in row] for row in self.fiber._ops["hess"]]

    @cached_property
    def _base_partials(self) -> tuple:
        if self.n == 0:
            return [], []
        eyes = [sp.identity(N, format="csr") for N in self.base.shape]
        first, second = [], []
        for i, (N, h) in enumerate(zip(self.base.shape, self.base.spacing)):
            D = _circulant(N, {1: 0.5 / h, -1: -0.5 / h})
            DD = _circulant(N, {1: 1 / h**2, 0: -2 / h**2, -1: 1 / h**2})
            for mats, one in ((first, D), (second, DD)):
                facs = list(eyes)
                facs[i] = one
                M = facs[0]
                for f in facs[1:]:
                    M = sp.kron(M, f, format="csr")
                mats.append(self._lift_base(M))
        return first, second

    @cached_property
    def _vertical_shift(self) -> list:
        """Operators ``u -> V_i . grad^v u`` for the connection term of the lift."""
        out = []
        G = self.connection[self.base_index]  # (N, n, m, m)
        y = self.directions
        frame = self.fiber.frame[self.fiber_index]  # (N, d, m)
        for i in range(self.n):
            V = np.einsum("nba,na->nb", G[:, i], y)
            comps = np.einsum("nb,nkb->nk", V, frame)
            op = sp.csr_matrix((self.size, self.size))
            for a in range(self.d):
                op = op + sp.diags(comps[:, a]) @ self.Dv[a]
            out.append(op.tocsr())
        return out

    @cached_property
    def Dh(self) -> list:
        """Horizontal-lift gradient operators ``e_i``."""
        P, _ = self._base_partials
        if not self.has_connection:
            return list(P)
        return [(P[i] - self._vertical_shift[i]).tocsr() for i in range(self.n)]

    @cached_property
    def Hh(self) -> list:
        """Horizontal Hessian operators ``D_ij`` (compact stencils, symmetrised)."""
        P, PP = self._base_partials
        V = self._vertical_shift if self.has_connection else None
        H = [[None] * self.n for _ in range(self.n)]
        for i in range(self.n):
            for j in range(i, self.n):
                M = PP[i] if i == j else (P[i] @ P[j])
                if V is not None:
                    M = M - P[i] @ V[j] - V[i] @ P[j] + V[i] @ V[j]
                    if i != j:
                        Mt = P[j] @ P[i] - P[j] @ V[i] - V[j] @ P[i] + V[j] @ V[i]
                        M = 0.5 * (M + Mt)
                H[i][j] = H[j][i] = M.tocsr()
        return H

    @cached_property
    def _frame_rotation(self) -> list:
        # rate at which the fibre frame turns along e_i (d=2 only)
        if self.d != 2:
            return [np.zeros(self.size) for _ in range(self.n)]
        G = self.connection[self.base_index]
        y = self.directions
        p = self.angles[:, 0]
        ephi = self.fiber.frame[self.fiber_index][:, 0]
        out = []
        for i in range(self.n):
            A = G[:, i]
            omega = np.column_stack([A[:, 2, 1], A[:, 0, 2], A[:, 1, 0]])
            c = np.einsum("nk,nk->n", omega, y) + np.cos(p) / np.sin(p) * np.einsum(
                "nk,nk->n", omega, ephi
            )
            out.append(c)
        return out

    @cached_property
    def Mix(self) -> list:
        """Mixed operators ``D_{i alpha}`` (diagnostics only), indexed ``[i][alpha]``."""
        out = []
        for i in range(self.n):
            row = [self.Dh[i] @ self.Dv[a] for a in range(self.d)]
            if self.d == 2 and self.has_connection:
                c = sp.diags(self._frame_rotation[i])
                row = [row[0] - c @ self.Dv[1], row[1] + c @ self.Dv[0]]
            out.append([r.tocsr() for r in row])
        return out

    def vertical_derivatives(self, values: np.ndarray):
        """Vertical gradient ``(d, N)`` and Hessian ``(d, d, N)`` from the nodal kernels."""
        B = self.base.size
        if self.d == 1:
            g, H = kernels.circle_derivatives(values.reshape(B, -1), self.fiber.htheta)
            return g.reshape(1, -1), H.reshape(1, 1, -1)
        f = self.fiber
        u3 = values.reshape((B,) + f.shape)
        g1, g2, h11, h12, h22 = kernels.sphere_derivatives(
            u3, f.hphi, f.htheta, np.sin(f.phi), np.cos(f.phi)
        )
        g = np.stack([g1.ravel(), g2.ravel()])
        H = np.empty((2, 2, values.size))
        H[0, 0], H[0, 1], H[1, 1] = h11.ravel(), h12.ravel(), h22.ravel()
        H[1, 0] = H[0, 1]
        return g, H


def _sample_connection(connection: ConnectionLike, base: BaseGrid, m: int) -> np.ndarray:
    n, B = base.n, base.size
    if connection is None:
        return np.zeros((B, n, m, m))
    if callable(connection):
        G = np.asarray(connection(base.coords), dtype=float)
    else:
        G = np.asarray(connection, dtype=float)
    if G.shape == (n, m, m):
        G = np.broadcast_to(G, (B, n, m, m)).copy()
    if G.shape != (B, n, m, m):
        raise GridError(f"connection must have shape {(n, m, m)} or {(B, n, m, m)}, got {G.shape}")
    if not np.all(np.isfinite(G)):
        raise GridError("connection coefficients must be finite")
    asym = np.max(np.abs(G + np.swapaxes(G, -1, -2))) if G.size else 0.0
    if asym > ANTISYMMETRY_TOL:
        raise GridError(
            f"connection is not antisymmetric in (alpha, beta): violation {asym:.3e}"
        )
    return G


def build_bundle_grid(
    n: int,
    d: int,
    base_res=16,
    fiber_res=32,
    connection: ConnectionLike = None,
) -> BundleGrid:
    """Build the discretised sphere bundle ``Sigma = T^n x S^d``.

    Parameters
    ----------
    n : int
        Base dimension, 0, 1 or 2 (0 is a single base point).
    d : int
        Fibre sphere dimension, 1 or 2 (``m = d + 1``).
    base_res : int or sequence of int
        Nodes per base axis (ignored when ``n = 0``).
    fiber_res : int or (int, int)
        Nodes on the circle, or ``(Nphi, Ntheta)`` on the 2-sphere. A single
        integer ``N`` for d=2 means ``(N, 2N)``.
    connection : array or callable, optional
        Christoffel symbols ``Gamma^beta_{i alpha}``, either one array of
        shape ``(n, m, m)``, one of shape ``(B, n, m, m)``, or a callable
        mapping base coordinates ``(B, n)`` to ``(B, n, m, m)``. Must be
        antisymmetric in ``(alpha, beta)``. Defaults to zero.

    Returns
    -------
    BundleGrid
    """
    if n not in (0, 1, 2):
        raise GridError(f"base dimension must be 0, 1 or 2, got {n}")
    if d not in (1, 2):
        raise GridError(f"fiber dimension must be 1 or 2, got {d}")
    base = _base_grid(n, base_res)
    fiber = _sphere_grid(d, fiber_res)
    G = _sample_connection(connection, base, d + 1)
    mu = (1,) * n + (0,) * d
    return BundleGrid(base, fiber, mu, G)


# --------------------------------------------------------------------------
# fields and derivatives


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a radially constant function on the bundle."""

    values: np.ndarray
    grid: BundleGrid

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float).reshape(-1)
        if v.size != self.grid.size:
            raise GridError(f"field has {v.size} values, grid has {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise GridError("field values must be finite")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: BundleGrid, func: Callable) -> "ScalarField":
        """Sample ``func(x, angles)`` with ``x`` of shape (N, n), ``angles`` (N, d)."""
        return cls(np.broadcast_to(func(grid.x, grid.angles), (grid.size,)), grid)

    @classmethod
    def constant(cls, grid: BundleGrid, c: float) -> "ScalarField":
        return cls(np.full(grid.size, float(c)), grid)

    def __add__(self, other):
        if isinstance(other, ScalarField):
            other = other.values
        return ScalarField(self.values + other, self.grid)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, ScalarField):
            other = other.values
        return ScalarField(self.values - other, self.grid)

    def __mul__(self, c):
        return ScalarField(self.values * float(c), self.grid)

    __rmul__ = __mul__

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)


@dataclass(frozen=True, eq=False)
class FrameDerivatives:
    """Frame components of ``Du`` and ``D^2 u`` per node.

    ``grad_h`` is ``(n, N)``, ``grad_v`` is ``(d, N)``, ``hess_h`` is
    ``(n, n, N)``, ``hess_v`` is ``(d, d, N)`` and ``mixed`` (diagnostics)
    is ``(n, d, N)``. Hessian parts are ``None`` for a gradient-only result.
    """

    grad_h: np.ndarray
    grad_v: np.ndarray
    hess_h: Optional[np.ndarray] = None
    hess_v: Optional[np.ndarray] = None
    mixed: Optional[np.ndarray] = None
    mu: tuple = field(default=())

    @property
    def grad(self) -> np.ndarray:
        return np.concatenate([self.grad_h, self.grad_v])

    def vertical_norm2(self) -> np.ndarray:
        return np.sum(self.grad_v**2, axis=0)

    def horizontal_norm2(self) -> np.ndarray:
        return np.sum(self.grad_h**2, axis=0)


def _horizontal_gradient(grid: BundleGrid, v: np.ndarray) -> np.ndarray:
    if grid.n == 0:
        return np.zeros((0, v.size))
    return np.stack([D @ v for D in grid.Dh])


def covariant_gradient(u: ScalarField) -> FrameDerivatives:
    """Frame gradient ``(D_i u, D_alpha u)`` by second-order central differences."""
    grid = u.grid
    gv, _ = grid.vertical_derivatives(u.values)
    gh = _horizontal_gradient(grid, u.values)
    return FrameDerivatives(gh, gv, mu=grid.mu)


def covariant_hessian(u: ScalarField) -> FrameDerivatives:
    """Frame gradient, both Hessian diagonal blocks and the mixed block.

    The vertical block includes the Christoffel corrections of the round
    metric; the horizontal block is built from compact second differences
    along the horizontal lifts. Both blocks are symmetric by construction.
    """
    grid = u.grid
    v = u.values
    gv, Hv = grid.vertical_derivatives(v)
    gh = _horizontal_gradient(grid, v)
    n, d = grid.n, grid.d
    Hh = np.zeros((n, n, v.size))
    for i in range(n):
        for j in range(i, n):
            Hh[i, j] = Hh[j, i] = grid.Hh[i][j] @ v
    Mx = np.zeros((n, d, v.size))
    for i in range(n):
        for a in range(d):
            Mx[i, a] = grid.Mix[i][a] @ v
    return FrameDerivatives(gh, gv, Hh, Hv, Mx, mu=grid.mu)


def vertical_third_derivative(u: ScalarField) -> np.ndarray:
    """Covariant third derivative of ``u`` along the fibre, shape ``(d, d, d, N)``.

    ``T[a, b, c] = e_a(D_bc u) - D^2u(D_{e_a} e_b, e_c) - D^2u(e_b, D_{e_a} e_c)``
    with the Levi-Civita connection of the round sphere, whose only
    nonzero frame terms (d=2) are ``D_{e2} e1 = cot(phi) e2`` and
    ``D_{e2} e2 = -cot(phi) e1``.
    """
    grid = u.grid
    d = grid.d
    _, H = grid.vertical_derivatives(u.values)
    T = np.empty((d, d, d, grid.size))
    for a in range(d):
        for b in range(d):
            for c in range(b, d):
                T[a, b, c] = T[a, c, b] = grid.Dv[a] @ H[b, c]
    if d == 2:
        p = grid.angles[:, 0]
        cot = np.cos(p) / np.sin(p)
        Gam = np.zeros((2, 2, 2, grid.size))
        Gam[1, 0, 1] = cot
        Gam[1, 1, 0] = -cot
        T -= np.einsum("abkn,kcn->abcn", Gam, H) + np.einsum("ackn,bkn->abcn", Gam, H)
    return T


def radial_identity_check(u: ScalarField, r: float, delta: Optional[float] = None) -> float:
    """Largest violation of the radial-direction Hessian identities on ``Sigma_r``.

    The radially constant extension of ``u`` is evaluated on the shells
    ``r (1 - delta)``, ``r`` and ``r (1 + delta)``. On each shell the frame
    gradient is ``rho^(mu_a - 1)`` times the unit-sphere one; radial
    differences then give ``D_{a nu} u`` and ``D_{nu nu} u``, which should
    equal ``-(1 - mu_a) D_a u / r`` and 0.

    Parameters
    ----------
    u : ScalarField
    r : float
        Shell radius, > 0.
    delta : float, optional
        Relative shell thickness, default the grid spacing ``h``.

    Returns
    -------
    float
        Maximum absolute violation over nodes and frame indices.
    """
    if r <= 0:
        raise GridError("radius must be positive")
    grid = u.grid
    delta = grid.h if delta is None else float(delta)
    if not 0 < delta < 1:
        raise GridError("shell thickness must lie in (0, 1)")
    D = covariant_gradient(u)
    rp, rm = r * (1 + delta), r * (1 - delta)

    def shell_grad(rho):
        # horizontal lifts scale V_i by rho and grad^v by 1/rho: no net change
        return D.grad_h, D.grad_v / rho

    gh_p, gv_p = shell_grad(rp)
    gh_m, gv_m = shell_grad(rm)
    gh_0, gv_0 = shell_grad(r)
    dr = rp - rm
    viol = 0.0
    if grid.n:
        viol = max(viol, float(np.max(np.abs((gh_p - gh_m) / dr))))
    dav = (gv_p - gv_m) / dr
    viol = max(viol, float(np.max(np.abs(dav + gv_0 / r))))
    # shell values of the radially constant extension
    u_p = u_m = u_0 = u.values
    dnn = (u_p - 2 * u_0 + u_m) / (r * delta) ** 2
    viol = max(viol, float(np.max(np.abs(dnn))))
    return viol
