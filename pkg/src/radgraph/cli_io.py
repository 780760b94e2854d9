"""Configuration, file formats and the ``radgraph`` command line."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from . import kernels
from .curvature import CurvatureSpec
from .errors import (
    ConfigError,
    CurvatureError,
    GridError,
    NoBracket,
    RadGraphError,
    SolverError,
)
from .geometry import BundleGrid, ScalarField, build_bundle_grid, radial_identity_check
from .solvers import (
    DirectProblem,
    SolverConfig,
    SolveReport,
    continuity_path_theorem3,
    monitor_bounds,
    nagumo_iteration_theorem4,
    newton_solve,
)
from .verification import (
    convergence_study,
    embed_and_measure,
    seeded_test_fields,
    structure_identity_suite,
    theorem1_oracle,
    theorem2_radius,
)

__all__ = [
    "RunConfig",
    "parse_config",
    "curvature_from_config",
    "emit_solution",
    "write_report",
    "load_curvature_table",
    "read_solution_csv",
    "read_obj",
    "main",
]

log = logging.getLogger(__name__)

MODES = ("direct", "theorem3", "theorem4", "verify", "convergence")
CURVATURE_KINDS = ("constant", "fiber", "radial", "homothety", "expr", "table")
REPORT_KEYS = ("mode", "config_echo", "homotopy_trace", "residuals", "monitors",
               "identity_checks", "timings", "warnings")

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4


# --------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Effective run configuration; field names double as config-file keys."""

    mode: str = "direct"
    base_dim: int = 0
    fiber_dim: int = 1
    base_res: int = 16
    fiber_res: object = 64
    curvature: Optional[dict] = None
    connection: Optional[list] = None
    lam: float = 1.0
    r1: Optional[float] = None
    r2: Optional[float] = None
    tol: float = 1e-10
    max_iters: int = 50
    mean_pin: object = None
    seed: int = 42
    out_prefix: str = "radgraph_out"
    bracket: list = field(default_factory=lambda: [1e-3, 1e3])
    resolutions: Optional[list] = None
    study: str = "direct"
    linear_solver: str = "auto"
    accept_least_squares: bool = False
    obj_base_nodes: list = field(default_factory=lambda: [0])

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iters=self.max_iters, lam=self.lam,
                            r1=self.r1, r2=self.r2, mean_pin=self.mean_pin,
                            linear_solver=self.linear_solver,
                            accept_least_squares=self.accept_least_squares)

    def grid(self) -> BundleGrid:
        conn = None if self.connection is None else np.asarray(self.connection, dtype=float)
        res = self.fiber_res if np.isscalar(self.fiber_res) else tuple(self.fiber_res)
        return build_bundle_grid(self.base_dim, self.fiber_dim, self.base_res, res, conn)


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_ALIASES = {"lambda": "lam", "n": "base_dim", "d": "fiber_dim"}


def _load_file(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", [str(exc)]) from None
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            msg = f"{path}:{exc.lineno}: JSON parse error: {exc.msg}"
            raise ConfigError(msg, [msg]) from None
    else:
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{path}:{mark.line + 1}" if mark is not None else path
            msg = f"{where}: YAML parse error: {getattr(exc, 'problem', exc)}"
            raise ConfigError(msg, [msg]) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping", ["top level must be a mapping"])
    return data


def _normalise(data: dict, source: str, problems: list) -> dict:
    out = {}
    for key, val in data.items():
        k = _ALIASES.get(str(key).replace("-", "_"), str(key).replace("-", "_"))
        if k not in _FIELDS:
            problems.append(f"{source}: unknown key {key!r}")
            continue
        out[k] = val
    return out


def _parse_curvature_flag(text: str) -> dict:
    if text.startswith("@"):
        return {"table": text[1:]}
    kind, sep, arg = text.partition(":")
    if not sep:
        raise ConfigError(f"--curvature: expected kind:args or @path, got {text!r}",
                          [f"--curvature: expected kind:args or @path, got {text!r}"])
    kind = kind.strip()
    if kind == "constant":
        try:
            return {"constant": float(arg)}
        except ValueError:
            raise ConfigError(f"--curvature: constant needs a number, got {arg!r}",
                              [f"--curvature: constant needs a number, got {arg!r}"]) from None
    if kind == "table" and arg.startswith("@"):
        arg = arg[1:]
    return {kind: arg}


def _validate(cfg: RunConfig, problems: list):
    if cfg.mode not in MODES:
        problems.append(f"mode must be one of {', '.join(MODES)}, got {cfg.mode!r}")
    if cfg.base_dim not in (0, 1, 2):
        problems.append(f"base_dim must be 0, 1 or 2, got {cfg.base_dim!r}")
    if cfg.fiber_dim not in (1, 2):
        problems.append(f"fiber_dim must be 1 or 2, got {cfg.fiber_dim!r}")
    res = [cfg.fiber_res] if np.isscalar(cfg.fiber_res) else list(cfg.fiber_res)
    if not all(isinstance(r, int) and r >= 8 for r in res):
        problems.append(f"fiber_res must be integers >= 8, got {cfg.fiber_res!r}")
    if not (isinstance(cfg.base_res, int) and cfg.base_res >= 8):
        problems.append(f"base_res must be an integer >= 8, got {cfg.base_res!r}")
    curv = cfg.curvature
    needs_curv = cfg.mode in ("direct", "theorem3", "theorem4", "convergence")
    if curv is None:
        if needs_curv:
            problems.append(f"curvature is required in {cfg.mode} mode")
    elif not isinstance(curv, dict) or not curv:
        problems.append("curvature must be a mapping with exactly one kind")
    else:
        kinds = [k for k in curv if k in CURVATURE_KINDS]
        unknown = [k for k in curv if k not in CURVATURE_KINDS]
        if unknown:
            problems.append(f"unknown curvature kind(s) {unknown}; expected one of {', '.join(CURVATURE_KINDS)}")
        if len(kinds) > 1:
            problems.append(f"curvature kinds are mutually exclusive, got {' + '.join(kinds)}")
        if "constant" in curv:
            c = curv["constant"]
            if not isinstance(c, (int, float)) or isinstance(c, bool) or not c > 0:
                problems.append(f"curvature constant must be a positive number, got {c!r}")
    if not (isinstance(cfg.lam, (int, float)) and cfg.lam > 0):
        problems.append(f"lam must be positive, got {cfg.lam!r}")
    if cfg.mode == "theorem4":
        if cfg.r1 is None:
            problems.append("r1 is required in theorem4 mode")
        if cfg.r2 is None:
            problems.append("r2 is required in theorem4 mode")
    if cfg.r1 is not None and not (isinstance(cfg.r1, (int, float)) and 0 < cfg.r1 <= 1):
        problems.append(f"r1 must satisfy 0 < r1 <= 1, got {cfg.r1!r}")
    if cfg.r2 is not None and not (isinstance(cfg.r2, (int, float)) and cfg.r2 >= 1):
        problems.append(f"r2 must satisfy r2 >= 1, got {cfg.r2!r}")
    if not (isinstance(cfg.tol, (int, float)) and cfg.tol > 0):
        problems.append(f"tol must be positive, got {cfg.tol!r}")
    if not (isinstance(cfg.max_iters, int) and cfg.max_iters >= 1):
        problems.append(f"max_iters must be a positive integer, got {cfg.max_iters!r}")
    if not isinstance(cfg.seed, int):
        problems.append(f"seed must be an integer, got {cfg.seed!r}")
    if cfg.mean_pin is not None and cfg.mean_pin != "start" and not isinstance(cfg.mean_pin, (int, float)):
        problems.append(f"mean_pin must be a number or 'start', got {cfg.mean_pin!r}")
    if not (isinstance(cfg.bracket, (list, tuple)) and len(cfg.bracket) == 2
            and all(isinstance(b, (int, float)) for b in cfg.bracket) and 0 < cfg.bracket[0] < cfg.bracket[1]):
        problems.append(f"bracket must be [a, b] with 0 < a < b, got {cfg.bracket!r}")
    if cfg.study not in ("direct", "theorem3"):
        problems.append(f"study must be direct or theorem3, got {cfg.study!r}")
    if cfg.linear_solver not in ("direct", "iterative", "auto"):
        problems.append(f"linear_solver must be direct, iterative or auto, got {cfg.linear_solver!r}")
    if cfg.resolutions is not None and (not isinstance(cfg.resolutions, list) or len(cfg.resolutions) < 3):
        problems.append("resolutions must list at least three levels")


def parse_config(path: Optional[str] = None, flags: Optional[dict] = None,
                 data: Optional[dict] = None) -> RunConfig:
    """Build a validated :class:`RunConfig`.

    Parameters
    ----------
    path : str, optional
        YAML or JSON file.
    flags : dict, optional
        Command-line values (``None`` entries are ignored); these override
        file values.
    data : dict, optional
        An already-loaded mapping, used instead of ``path``.

    Raises
    ------
    ConfigError
        On parse errors (with file line) or listing every violated
        constraint.
    """
    problems: list = []
    merged: dict = {}
    if path is not None:
        merged.update(_normalise(_load_file(path), path, problems))
    if data is not None:
        merged.update(_normalise(dict(data), "config", problems))
    for key, val in (flags or {}).items():
        if val is None:
            continue
        k = _ALIASES.get(key, key)
        if k not in _FIELDS:
            problems.append(f"--{key.replace('_', '-')}: unknown option")
            continue
        if k == "curvature" and isinstance(val, str):
            val = _parse_curvature_flag(val)
        merged[k] = val
    if isinstance(merged.get("fiber_res"), (list, tuple)):
        merged["fiber_res"] = list(merged["fiber_res"])
    cfg = RunConfig(**merged)
    _validate(cfg, problems)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems), problems)
    return cfg


def curvature_from_config(cfg: RunConfig, base_dir: str = ".") -> CurvatureSpec:
    """Instantiate the configured curvature."""
    (kind, arg), = cfg.curvature.items()
    m = cfg.fiber_dim + 1
    if kind == "constant":
        return CurvatureSpec.constant(arg)
    if kind == "fiber":
        return CurvatureSpec.fiber_constant(str(arg))
    if kind == "radial":
        return CurvatureSpec.radial(str(arg))
    if kind == "homothety":
        return CurvatureSpec.homothety(m, str(arg) if arg not in (None, "") else "1")
    if kind == "expr":
        return CurvatureSpec.expression(str(arg))
    path = arg if os.path.isabs(arg) else os.path.join(base_dir, arg)
    return load_curvature_table(path)


# --------------------------------------------------------------------------
# curvature tables


def load_curvature_table(path: str) -> CurvatureSpec:
    """Read a sampled curvature from CSV.

    The header names the coordinate columns (any of ``x1 x2 theta phi``,
    in grid order), then ``rho`` and ``K``. Every ray must be sampled at
    the same increasing radii.

    Raises
    ------
    CurvatureError
        Non-positive ``K`` (row number given), missing columns or an
        inconsistent radial grid.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CurvatureError(f"cannot read curvature table {path}: {exc.strerror}") from None
    if not rows:
        raise CurvatureError(f"{path}: empty table")
    header = [h.strip() for h in rows[0]]
    if "rho" not in header or "K" not in header:
        raise CurvatureError(f"{path}: header must contain rho and K columns, got {header}")
    coord_cols = [i for i, h in enumerate(header) if h not in ("rho", "K")]
    ir, ik = header.index("rho"), header.index("K")
    recs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = [float(c) for c in row]
        except ValueError:
            raise CurvatureError(f"{path}: row {lineno}: non-numeric entry") from None
        if len(vals) != len(header):
            raise CurvatureError(f"{path}: row {lineno}: expected {len(header)} columns, got {len(vals)}")
        if not vals[ik] > 0:
            raise CurvatureError(f"{path}: row {lineno}: K must be positive, got {vals[ik]:g}")
        if not vals[ir] > 0:
            raise CurvatureError(f"{path}: row {lineno}: rho must be positive, got {vals[ir]:g}")
        recs.append((tuple(vals[i] for i in coord_cols), vals[ir], vals[ik]))
    if not recs:
        raise CurvatureError(f"{path}: no data rows")
    rays: dict = {}
    for site, rho, k in recs:
        rays.setdefault(site, []).append((rho, k))
    sites = list(rays)
    ref = sorted(r for r, _ in rays[sites[0]])
    values = []
    for s in sites:
        pts = sorted(rays[s])
        radii = [r for r, _ in pts]
        if len(radii) != len(ref) or not np.allclose(radii, ref, rtol=1e-12, atol=0):
            raise CurvatureError(f"{path}: inconsistent grid: ray {s} is sampled at different radii")
        if len(set(radii)) != len(radii):
            raise CurvatureError(f"{path}: inconsistent grid: repeated radius on ray {s}")
        values.append([k for _, k in pts])
    return CurvatureSpec.table(np.array(sites, dtype=float).reshape(len(sites), len(coord_cols)),
                               np.array(ref), np.array(values),
                               coord_names=[header[i] for i in coord_cols], source=path)


# --------------------------------------------------------------------------
# output


def _fmt(x: float) -> str:
    return "%.17g" % x


def _to_json(obj, indent=0) -> str:
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating, bool, type(None))) for v in obj):
            return "[" + ", ".join(_to_json(v) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, np.ndarray):
        return _to_json(obj.tolist(), indent)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return _fmt(x) if math.isfinite(x) else "null"
    return json.dumps(str(obj))


def write_report(path: str, report: dict):
    """Write a report mapping with the fixed key set as JSON (17 significant digits)."""
    missing = [k for k in REPORT_KEYS if k not in report]
    extra = [k for k in report if k not in REPORT_KEYS]
    if missing or extra:
        raise ValueError(f"report keys mismatch: missing {missing}, unexpected {extra}")
    ordered = {k: report[k] for k in REPORT_KEYS}
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(_to_json(ordered) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report {path}: {exc.strerror}") from exc


def _write_csv(path: str, u: ScalarField):
    grid = u.grid
    coords = grid.node_coords()
    header = ["node_index"] + grid.coord_names() + ["u"]
    lines = [",".join(header)]
    for i in range(grid.size):
        lines.append(",".join([str(i)] + [_fmt(c) for c in coords[i]] + [_fmt(u.values[i])]))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _write_obj(path: str, u: ScalarField, base_node: int):
    grid = u.grid
    Nf = grid.fiber.size
    V = np.exp(u.values[base_node * Nf:(base_node + 1) * Nf])[:, None] * grid.fiber.directions
    out = [f"# radial graph fibre over base node {base_node}"]
    for p in V:
        xyz = list(p) + [0.0] * (3 - len(p))
        out.append("v " + " ".join(_fmt(c) for c in xyz))
    if grid.d == 1:
        out.append("l " + " ".join(str(k + 1) for k in range(Nf)) + " 1")
    else:
        from .verification import sphere_triangles

        for a, b, c in sphere_triangles(*grid.fiber.shape):
            out.append(f"f {a + 1} {b + 1} {c + 1}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")


def emit_solution(u: ScalarField, report: dict, prefix: str, base_nodes=(0,)) -> dict:
    """Write ``<prefix>.csv``, ``<prefix>_fiber<b>.obj`` and ``<prefix>.json``.

    Returns
    -------
    dict
        Paths written, keyed ``csv``, ``obj`` (list) and ``json``.
    """
    d = os.path.dirname(prefix)
    if d:
        os.makedirs(d, exist_ok=True)
    paths = {"csv": prefix + ".csv", "obj": [], "json": prefix + ".json"}
    try:
        _write_csv(paths["csv"], u)
        for b in base_nodes:
            p = f"{prefix}_fiber{b}.obj"
            _write_obj(p, u, int(b))
            paths["obj"].append(p)
    except OSError as exc:
        raise OSError(f"cannot write solution under {prefix}: {exc.strerror}") from exc
    write_report(paths["json"], report)
    return paths


def read_solution_csv(path: str):
    """Read a solution CSV back; returns ``(header, coords, values)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(c) for c in r] for r in rows[1:]])
    return header, data[:, 1:-1], data[:, -1]


def read_obj(path: str):
    """Parse vertices and ``f``/``l`` records of an OBJ file (0-based indices)."""
    verts, faces, lines = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(c.split("/")[0]) - 1 for c in parts[1:]])
            elif parts[0] == "l":
                lines.append([int(c) - 1 for c in parts[1:]])
    return np.array(verts), np.array(faces, dtype=int), lines


# --------------------------------------------------------------------------
# runs


def _base_report(cfg: Optional[RunConfig], mode: str) -> dict:
    return {
        "mode": mode,
        "config_echo": cfg.to_dict() if cfg is not None else {},
        "homotopy_trace": [],
        "residuals": {"status": "failed", "failure_reason": None},
        "monitors": {},
        "identity_checks": {},
        "timings": {},
        "warnings": [],
    }


def _fill_from_solve(rep: dict, sr: SolveReport):
    rep["homotopy_trace"] = sr.steps + ([{"sweeps": sr.sweeps}] if sr.sweeps else [])
    rep["residuals"].update(sr.residuals)
    rep["residuals"]["histories"] = sr.residual_histories
    rep["monitors"] = {
        "bounds": sr.monitors,
        "lemma1_iterates": sr.lemma1_iterates,
        "admissibility_min": float(min(sr.admissibility_trace)) if sr.admissibility_trace else None,
    }
    if sr.monitors and "c0_bound_satisfied" in sr.monitors[-1]:
        rep["monitors"]["c0_bound_satisfied"] = sr.monitors[-1]["c0_bound_satisfied"]
    rep["timings"]["solve_s"] = sr.wall_time
    rep["warnings"].extend(w for w in sr.warnings if w not in rep["warnings"])


def run_solve(cfg: RunConfig, base_dir: str = ".") -> tuple:
    """Run a solve mode; returns ``(exit_code, report, field or None)``."""
    rep = _base_report(cfg, cfg.mode)
    t0 = time.perf_counter()
    grid = cfg.grid()
    K = curvature_from_config(cfg, base_dir)
    scfg = cfg.solver_config()
    u = None
    try:
        if cfg.mode == "direct":
            prob = DirectProblem(grid, K, mean_pin=cfg.mean_pin)
            u, sr = newton_solve(prob, ScalarField.constant(grid, 0.0), scfg)
            sr.residuals = {"log_direct": sr.residual_histories[-1][-1], **prob.raw_residuals(u)}
            sr.monitors.append(monitor_bounds(u, prob))
            sr.converged = True
        elif cfg.mode == "theorem3":
            u, sr = continuity_path_theorem3(grid, K, scfg)
        else:
            u, sr = nagumo_iteration_theorem4(grid, K, scfg)
    except SolverError as exc:
        if exc.report is not None:
            _fill_from_solve(rep, exc.report)
        rep["residuals"]["status"] = "failed"
        rep["residuals"]["failure_reason"] = f"{type(exc).__name__}: {exc}"
        rep["timings"]["total_s"] = time.perf_counter() - t0
        return EXIT_SOLVER, rep, None
    _fill_from_solve(rep, sr)
    ok = sr.converged
    rep["residuals"]["status"] = "converged" if ok else "failed"
    rep["residuals"]["failure_reason"] = sr.failure_reason
    checks = {"radial_identity_r1": radial_identity_check(u, 1.0)}
    if grid.fiber.size:
        _, kappa = embed_and_measure(u, 0)
        Nf = grid.fiber.size
        Kp = K.evaluate(grid, np.exp(u.values))[:Nf] if cfg.mode != "theorem3" else None
        if Kp is not None:
            keep = np.setdiff1d(np.arange(Nf), grid.fiber.pole_rows)
            rel = np.abs(kappa[keep] - Kp[keep]) / Kp[keep]
            checks["curvature_cross_check_max_rel"] = float(np.max(rel))
    rep["identity_checks"] = checks
    for fl in K.flags():
        if fl not in rep["warnings"]:
            rep["warnings"].append(fl)
    rep["timings"]["total_s"] = time.perf_counter() - t0
    return (EXIT_OK if ok else EXIT_SOLVER), rep, u


def run_verify(cfg: RunConfig, base_dir: str = ".") -> tuple:
    """Structure identities and closed-form checks on the configured grid."""
    rep = _base_report(cfg, "verify")
    t0 = time.perf_counter()
    grid = cfg.grid()
    h2 = grid.h**2
    checks = {}
    failures = []
    suite = structure_identity_suite(grid, seed=cfg.seed)
    checks["structure"] = suite
    if suite["mixed_commutator"] > 1e-12 and not grid.has_connection:
        failures.append("flat mixed commutator above 1e-12")
    fld = seeded_test_fields(grid.n, grid.d, 1, seed=cfg.seed)[0].on(grid)
    checks["radial_identity"] = {str(r): radial_identity_check(fld, r) for r in (1.0, 2.0)}
    if cfg.curvature and "fiber" in cfg.curvature:
        kappa = curvature_from_config(cfg, base_dir)
    elif cfg.curvature and "constant" in cfg.curvature:
        kappa = curvature_from_config(cfg, base_dir)
    else:
        kappa = CurvatureSpec.fiber_constant("2+cos(x)") if grid.n else CurvatureSpec.constant(4.0)
    from .curvature_ops import residual_direct

    u1 = theorem1_oracle(kappa, grid)
    r1 = float(np.max(np.abs(residual_direct(u1, kappa))))
    checks["theorem1_residual"] = r1
    if r1 > 10 * h2:
        failures.append("fibre-constant oracle residual above 10 h^2")
    mesh, kap = embed_and_measure(ScalarField.constant(grid, 0.0))
    keep = np.setdiff1d(np.arange(grid.fiber.size), mesh.excluded)
    dev = float(np.max(np.abs(kap[keep] - 1.0)))
    checks["unit_sphere_curvature_deviation"] = dev
    checks["unit_sphere_excluded_vertices"] = mesh.excluded.tolist()
    if dev > 0.05:
        failures.append("unit-sphere discrete curvature off by more than 5%")
    if cfg.curvature and "radial" in cfg.curvature:
        K = curvature_from_config(cfg, base_dir)
        rr = theorem2_radius(K, grid.m, cfg.bracket)
        checks["radius"] = dataclasses.asdict(rr)
    rep["identity_checks"] = checks
    rep["residuals"]["status"] = "passed" if not failures else "failed"
    rep["residuals"]["failure_reason"] = "; ".join(failures) or None
    rep["timings"]["total_s"] = time.perf_counter() - t0
    return (EXIT_OK if not failures else EXIT_VERIFY), rep


def run_convergence(cfg: RunConfig, base_dir: str = ".") -> tuple:
    """Self-convergence of the configured problem over three or more levels."""
    rep = _base_report(cfg, "convergence")
    t0 = time.perf_counter()
    K = curvature_from_config(cfg, base_dir)
    levels = cfg.resolutions
    if levels is None:
        f0 = cfg.fiber_res
        levels = [f0 * 2**k if np.isscalar(f0) else [r * 2**k for r in f0] for k in range(3)]
    scfg = cfg.solver_config()
    traces = []

    def solve(level):
        k = levels.index(level)
        sub = dataclasses.replace(cfg, fiber_res=level, base_res=cfg.base_res * 2**k)
        grid = sub.grid()
        if cfg.study == "theorem3":
            u, sr = continuity_path_theorem3(grid, K, scfg)
        else:
            u, sr = newton_solve(DirectProblem(grid, K, mean_pin=cfg.mean_pin),
                                 ScalarField.constant(grid, 0.0), scfg)
        traces.append({"level": level, "iterations": sum(len(h) - 1 for h in sr.residual_histories)})
        return u

    try:
        res = convergence_study(solve, levels)
    except SolverError as exc:
        rep["residuals"]["failure_reason"] = f"{type(exc).__name__}: {exc}"
        rep["timings"]["total_s"] = time.perf_counter() - t0
        return EXIT_SOLVER, rep
    rep["homotopy_trace"] = traces
    rep["identity_checks"] = {"convergence": dataclasses.asdict(res)}
    ok = res.within(2.0, 0.3)
    rep["residuals"]["status"] = "passed" if ok else "failed"
    rep["residuals"]["failure_reason"] = None if ok else f"observed orders {res.orders}"
    rep["timings"]["total_s"] = time.perf_counter() - t0
    return (EXIT_OK if ok else EXIT_VERIFY), rep


def run_radius(cfg: RunConfig, base_dir: str = ".") -> tuple:
    rep = _base_report(cfg, "radius")
    K = curvature_from_config(cfg, base_dir)
    rr = theorem2_radius(K, cfg.fiber_dim + 1, cfg.bracket)
    rep["identity_checks"] = {"radius": dataclasses.asdict(rr)}
    rep["residuals"]["status"] = "passed"
    return EXIT_OK, rep


# --------------------------------------------------------------------------
# command line


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radgraph", description=(
        "Radial graphs over sphere bundles with prescribed vertical Gaussian curvature."))
    p.add_argument("verb", choices=("solve", "verify", "converge", "radius"))
    p.add_argument("--config", help="YAML or JSON configuration file")
    p.add_argument("--mode", choices=("direct", "theorem3", "theorem4"))
    p.add_argument("--base-dim", type=int, dest="base_dim")
    p.add_argument("--fiber-dim", type=int, dest="fiber_dim")
    p.add_argument("--base-res", type=int, dest="base_res")
    p.add_argument("--fiber-res", type=int, nargs="+", dest="fiber_res",
                   help="N for the circle, or Nphi [Ntheta] for the 2-sphere")
    p.add_argument("--curvature", help="kind:args (constant, fiber, radial, homothety, expr, table) or @table.csv")
    p.add_argument("--lambda", type=float, dest="lam")
    p.add_argument("--r1", type=float)
    p.add_argument("--r2", type=float)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iters", type=int, dest="max_iters")
    p.add_argument("--mean-pin", dest="mean_pin", help="number or 'start'")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-prefix", dest="out_prefix")
    p.add_argument("--bracket", type=float, nargs=2)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _flags(ns: argparse.Namespace) -> dict:
    out = {k: v for k, v in vars(ns).items() if k not in ("verb", "config", "verbose")}
    fr = out.get("fiber_res")
    if fr is not None:
        out["fiber_res"] = fr[0] if len(fr) == 1 else list(fr)
    if out.get("bracket") is not None:
        out["bracket"] = list(out["bracket"])
    mp = out.get("mean_pin")
    if mp is not None and mp != "start":
        try:
            out["mean_pin"] = float(mp)
        except ValueError:
            out["mean_pin"] = mp
    return out


def main(argv=None) -> int:
    """Entry point of the ``radgraph`` command; returns the exit code."""
    ns = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    flags = _flags(ns)
    verb_mode = {"verify": "verify", "converge": "convergence"}.get(ns.verb)
    if verb_mode:
        flags["mode"] = verb_mode
    prefix = flags.get("out_prefix") or "radgraph_out"
    base_dir = os.path.dirname(os.path.abspath(ns.config)) if ns.config else "."
    cfg = None
    try:
        cfg = parse_config(ns.config, flags)
        prefix = cfg.out_prefix
        if ns.verb == "solve":
            if cfg.mode not in ("direct", "theorem3", "theorem4"):
                raise ConfigError(f"solve needs mode direct, theorem3 or theorem4, got {cfg.mode}",
                                  [f"mode {cfg.mode!r} is not a solve mode"])
            code, rep, u = run_solve(cfg, base_dir)
            if u is not None:
                paths = emit_solution(u, rep, prefix, cfg.obj_base_nodes)
                print(f"wrote {paths['csv']}, {', '.join(paths['obj'])}, {paths['json']}")
            else:
                write_report(prefix + ".json", rep)
                print(f"wrote {prefix}.json")
        elif ns.verb == "verify":
            code, rep = run_verify(cfg, base_dir)
            write_report(prefix + ".json", rep)
        elif ns.verb == "converge":
            code, rep = run_convergence(cfg, base_dir)
            write_report(prefix + ".json", rep)
        else:
            code, rep = run_radius(cfg, base_dir)
            write_report(prefix + ".json", rep)
            print(f"radius {_fmt(rep['identity_checks']['radius']['radius'])}")
        status = rep["residuals"]["status"]
        print(f"{ns.verb}: {status} (backend {kernels.BACKEND})")
        if rep["residuals"].get("failure_reason"):
            print(f"reason: {rep['residuals']['failure_reason']}", file=sys.stderr)
        return code
    except (ConfigError, CurvatureError, GridError, NoBracket) as exc:
        print(f"error: {exc}", file=sys.stderr)
        rep = _base_report(cfg, flags.get("mode") or "unknown")
        rep["residuals"]["status"] = "invalid"
        rep["residuals"]["failure_reason"] = str(exc)
        try:
            write_report(prefix + ".json", rep)
        except OSError:
            pass
        return EXIT_VALIDATION
    except RadGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
