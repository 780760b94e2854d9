"""Prescribed curvature functions ``K(x, theta, rho)`` on the punctured bundle."""

from __future__ import annotations

import ast
import threading
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import CurvatureError

__all__ = ["CurvatureSpec", "parse_expression"]

_FUNCS = {"exp": np.exp, "log": np.log, "sin": np.sin, "cos": np.cos, "sqrt": np.sqrt}
_CONSTS = {"pi": np.pi, "e": np.e}
_VARS = ("x", "y", "x1", "x2", "theta", "phi", "rho")
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def parse_expression(text: str) -> Callable:
    """Compile a small arithmetic expression into a vectorised function.

    The grammar has ``+ - * / ^`` (``**`` also accepted), parentheses, the
    functions ``exp log sin cos sqrt``, the constants ``pi e`` and the
    variables ``x y x1 x2 theta phi rho`` (``x`` is ``x1`` and ``y`` is
    ``x2``).

    Returns
    -------
    callable
        ``f(env)`` where ``env`` maps variable names to arrays.
    """
    src = text.replace("^", "**")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise CurvatureError(f"cannot parse expression {text!r}: {exc.msg}") from None

    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Load)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
            continue
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
            continue
        if isinstance(node, (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.UAdd, ast.USub)):
            continue
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            continue
        if isinstance(node, ast.Name) and (node.id in _VARS or node.id in _CONSTS or node.id in _FUNCS):
            continue
        if (
            isinstance(node, ast.Call)
            and isinstance(node.func, ast.Name)
            and node.func.id in _FUNCS
            and len(node.args) == 1
            and not node.keywords
        ):
            continue
        raise CurvatureError(f"unsupported element {type(node).__name__} in expression {text!r}")

    code = compile(tree, "<curvature>", "eval")
    names = {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)}

    def f(env):
        scope = dict(_FUNCS)
        scope.update(_CONSTS)
        for v in names & set(_VARS):
            if v not in env:
                raise CurvatureError(f"variable {v!r} is not defined on this grid")
            scope[v] = env[v]
        return eval(code, {"__builtins__": {}}, scope)

    f.variables = names & set(_VARS)
    f.source = text
    return f


def _env(x, angles, rho):
    env = {"rho": rho}
    if x.shape[1] >= 1:
        env["x"] = env["x1"] = x[:, 0]
    if x.shape[1] >= 2:
        env["y"] = env["x2"] = x[:, 1]
    if angles.shape[1] == 1:
        env["theta"] = angles[:, 0]
    else:
        env["phi"], env["theta"] = angles[:, 0], angles[:, 1]
    return env


class CurvatureSpec:
    """A strictly positive function ``K`` on the punctured bundle.

    Use the class constructors rather than ``__init__``. ``K`` is evaluated
    at base coordinates ``x``, fibre angles and radius ``rho``.

    Attributes
    ----------
    kind : str
        One of ``constant``, ``fiber_constant``, ``radial``, ``homothety``,
        ``expression``, ``table``, ``callable``.
    params : dict
        JSON-friendly description (echoed in reports).
    """

    def __init__(self, kind, params, func, rho_dlog=None, *, radial=False,
                 rho_free=False, homothety_m=None):
        self.kind = kind
        self.params = params
        self._func = func
        self._rho_dlog = rho_dlog
        self.is_radial = radial
        self.rho_free = rho_free
        self.homothety_m = homothety_m
        self._lock = threading.Lock()
        self._flags = set()

    def __repr__(self):
        return f"CurvatureSpec({self.kind!r}, {self.params!r})"

    # constructors ------------------------------------------------------------

    @classmethod
    def constant(cls, c: float) -> "CurvatureSpec":
        c = float(c)
        if not c > 0:
            raise CurvatureError(f"constant curvature must be positive, got {c}")
        return cls(
            "constant", {"value": c},
            lambda x, a, r: np.full(np.shape(r), c),
            lambda x, a, r: np.zeros(np.shape(r)),
            radial=True, rho_free=True,
        )

    @classmethod
    def fiber_constant(cls, kappa) -> "CurvatureSpec":
        """Vertical lift ``K = kappa o pi`` of a base function.

        ``kappa`` is an expression in ``x``/``y`` or a callable of base
        coordinates ``(N, n)``.
        """
        if isinstance(kappa, str):
            f = parse_expression(kappa)
            if f.variables - {"x", "y", "x1", "x2"}:
                raise CurvatureError("a fibre-constant curvature may only depend on base coordinates")
            func = lambda x, a, r: np.broadcast_to(f(_env(x, a, r)), np.shape(r)).astype(float)
            params = {"expr": kappa}
        else:
            func = lambda x, a, r: np.broadcast_to(kappa(x), np.shape(r)).astype(float)
            params = {"callable": getattr(kappa, "__name__", "kappa")}
        return cls("fiber_constant", params, func, lambda x, a, r: np.zeros(np.shape(r)),
                   rho_free=True)

    @classmethod
    def radial(cls, profile, dprofile: Optional[Callable] = None) -> "CurvatureSpec":
        """``K = K(rho)``; ``profile`` is an expression in ``rho`` or a callable."""
        if isinstance(profile, str):
            f = parse_expression(profile)
            if f.variables - {"rho"}:
                raise CurvatureError("a radial curvature may only depend on rho")
            spec = cls.expression(profile)
            spec.kind, spec.is_radial = "radial", True
            return spec
        func = lambda x, a, r: np.asarray(profile(r), dtype=float)
        dlog = None
        if dprofile is not None:
            dlog = lambda x, a, r: r * dprofile(r) / profile(r)
        return cls("radial", {"callable": getattr(profile, "__name__", "K")}, func, dlog,
                   radial=True)

    @classmethod
    def homothety(cls, m: int, k="1") -> "CurvatureSpec":
        """Homothety-invariant ``K(rho theta) = rho^(1-m) k(x, theta)``."""
        if isinstance(k, (int, float)):
            k = repr(float(k))
        if isinstance(k, str):
            f = parse_expression(k)
            if "rho" in f.variables:
                raise CurvatureError("the angular factor of a homothety-invariant curvature may not use rho")
            kf = lambda x, a, r: np.broadcast_to(f(_env(x, a, r)), np.shape(r)).astype(float)
            params = {"m": m, "k": k}
        else:
            kf = lambda x, a, r: np.broadcast_to(k(x, a), np.shape(r)).astype(float)
            params = {"m": m, "k": getattr(k, "__name__", "k")}
        func = lambda x, a, r: np.asarray(r, dtype=float) ** (1 - m) * kf(x, a, r)
        dlog = lambda x, a, r: np.full(np.shape(r), float(1 - m))
        radial = params["k"] == "1.0" or params["k"] == "1"
        return cls("homothety", params, func, dlog, radial=radial, homothety_m=m)

    @classmethod
    def expression(cls, text: str) -> "CurvatureSpec":
        """General expression; the radial log-derivative uses a complex step."""
        f = parse_expression(text)

        def func(x, a, r):
            return np.broadcast_to(np.real(f(_env(x, a, r))), np.shape(r)).astype(float)

        def dlog(x, a, r):
            if "rho" not in f.variables:
                return np.zeros(np.shape(r))
            r = np.asarray(r, dtype=float)
            step = 1e-20 * np.maximum(r, 1.0)
            val = np.broadcast_to(f(_env(x, a, r + 1j * step)), np.shape(r))
            return r * np.imag(val) / step / np.real(val)

        return cls("expression", {"expr": text}, func, dlog,
                   radial=f.variables <= {"rho"}, rho_free="rho" not in f.variables)

    @classmethod
    def from_callable(cls, func: Callable, rho_dlog: Optional[Callable] = None,
                      name: str = "callable") -> "CurvatureSpec":
        """Wrap ``func(x, angles, rho)``; ``rho_dlog`` returns ``rho d/drho log K``."""
        return cls("callable", {"callable": name}, func, rho_dlog)

    @classmethod
    def table(cls, sites: np.ndarray, radii: np.ndarray, values: np.ndarray,
              coord_names=(), source: str = "") -> "CurvatureSpec":
        """Sampled curvature with cubic splines of ``log K`` in ``log rho``.

        Parameters
        ----------
        sites : ndarray, shape (S, c)
            Base/fibre coordinates of each sampled ray (``c = 0`` for a
            purely radial table, then ``S = 1``).
        radii : ndarray, shape (R,)
            Increasing radii shared by all rays.
        values : ndarray, shape (S, R)
            Positive samples.

        Outside ``[radii[0], radii[-1]]`` the spline is continued
        linearly in ``log K`` versus ``log rho``; such evaluations are
        flagged in :meth:`flags`.
        """
        radii = np.asarray(radii, dtype=float)
        values = np.asarray(values, dtype=float)
        sites = np.asarray(sites, dtype=float).reshape(values.shape[0], -1)
        if np.any(values <= 0):
            raise CurvatureError("table values must be positive")
        if radii.size < 2 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
            raise CurvatureError("table radii must be positive and strictly increasing")
        lr = np.log(radii)
        if radii.size >= 4:
            spline = CubicSpline(lr, np.log(values), axis=1, bc_type="not-a-knot")
        else:
            spline = CubicSpline(lr, np.log(values), axis=1, bc_type="natural")
        dspline = spline.derivative()
        lo, hi = lr[0], lr[-1]
        slope_lo, slope_hi = dspline(lo), dspline(hi)  # (S,)
        val_lo, val_hi = spline(lo), spline(hi)
        names = tuple(coord_names)
        spec = None

        def site_of(x, a):
            if sites.shape[1] == 0:
                return np.zeros(x.shape[0], dtype=int)
            pts = np.column_stack([x, a])
            if pts.shape[1] != sites.shape[1]:
                raise CurvatureError(
                    f"table has {sites.shape[1]} coordinate columns, grid nodes have {pts.shape[1]}"
                )
            out = np.empty(pts.shape[0], dtype=int)
            for i, p in enumerate(pts):
                diff = np.angle(np.exp(1j * (sites - p)))
                dist = np.max(np.abs(diff), axis=1)
                j = int(np.argmin(dist))
                if dist[j] > 1e-9:
                    raise CurvatureError(f"table has no ray at node coordinates {tuple(p)}")
                out[i] = j
            return out

        cache = {}

        def sites_cached(x, a):
            key = (x.shape, a.shape, x.tobytes(), a.tobytes())
            if key not in cache:
                cache[key] = site_of(x, a)
            return cache[key]

        def logk(x, a, r):
            s = sites_cached(np.atleast_2d(x), np.atleast_2d(a)) if sites.shape[1] else None
            r = np.asarray(r, dtype=float)
            t = np.log(r)
            flat = t.reshape(-1)
            idx = np.zeros(flat.size, dtype=int) if s is None else np.broadcast_to(s, flat.shape)
            inside = (flat >= lo) & (flat <= hi)
            out = np.empty(flat.size)
            dout = np.empty(flat.size)
            if np.any(inside):
                allv = spline(flat[inside])  # (S, k)
                alld = dspline(flat[inside])
                cols = np.arange(int(inside.sum()))
                out[inside] = allv[idx[inside], cols]
                dout[inside] = alld[idx[inside], cols]
            below, above = flat < lo, flat > hi
            if np.any(below):
                out[below] = val_lo[idx[below]] + slope_lo[idx[below]] * (flat[below] - lo)
                dout[below] = slope_lo[idx[below]]
            if np.any(above):
                out[above] = val_hi[idx[above]] + slope_hi[idx[above]] * (flat[above] - hi)
                dout[above] = slope_hi[idx[above]]
            if np.any(below | above):
                spec._flag("table extrapolated log-linearly outside "
                           f"rho in [{radii[0]:.6g}, {radii[-1]:.6g}]")
            return out.reshape(r.shape), dout.reshape(r.shape)

        func = lambda x, a, r: np.exp(logk(x, a, r)[0])
        dlog = lambda x, a, r: logk(x, a, r)[1]
        params = {"path": source, "rays": int(values.shape[0]), "radii": int(radii.size),
                  "coords": list(names)}
        spec = cls("table", params, func, dlog, radial=sites.shape[1] == 0)
        return spec

    # evaluation --------------------------------------------------------------

    def _flag(self, msg: str):
        with self._lock:
            self._flags.add(msg)

    def flags(self) -> list:
        """Warnings raised during evaluation (e.g. table extrapolation)."""
        with self._lock:
            return sorted(self._flags)

    def __call__(self, x, angles, rho) -> np.ndarray:
        val = np.asarray(self._func(x, angles, rho), dtype=float)
        if not np.all(np.isfinite(val)) or np.any(val <= 0):
            bad = np.flatnonzero(~(np.isfinite(val) & (val > 0)).reshape(-1))
            raise CurvatureError(
                f"{self.kind} curvature is not strictly positive at {bad.size} evaluation point(s), "
                f"first index {int(bad[0])}"
            )
        return val

    def evaluate(self, grid, rho) -> np.ndarray:
        """Nodal values of ``K(x, theta, rho)`` on a bundle grid."""
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (grid.size,))
        return self(grid.x, grid.angles, rho)

    def rho_dlog(self, x, angles, rho) -> np.ndarray:
        """``rho * d/drho log K``; exact where known, complex step or central difference otherwise."""
        if self._rho_dlog is not None:
            return np.asarray(self._rho_dlog(x, angles, rho), dtype=float)
        rho = np.asarray(rho, dtype=float)
        step = 1e-6
        kp = self(x, angles, rho * np.exp(step))
        km = self(x, angles, rho * np.exp(-step))
        return (np.log(kp) - np.log(km)) / (2 * step)

    def rho_dlogK(self, grid, rho) -> np.ndarray:
        rho = np.broadcast_to(np.asarray(rho, dtype=float), (grid.size,))
        return self.rho_dlog(grid.x, grid.angles, rho)

    def radial_profile(self, rho) -> np.ndarray:
        """``K(rho)`` for a radial specification."""
        if not self.is_radial:
            raise CurvatureError(f"{self.kind} curvature is not radial")
        r = np.atleast_1d(np.asarray(rho, dtype=float))
        return self(np.zeros((r.size, 0)), np.zeros((r.size, 1)), r).reshape(np.shape(rho))

    def base_values(self, grid) -> np.ndarray:
        """Nodal values at unit radius, for radius-free data such as ``f``."""
        return self.evaluate(grid, 1.0)
