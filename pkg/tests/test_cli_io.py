import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from radgraph import (
    ConfigError,
    CurvatureError,
    ScalarField,
    build_bundle_grid,
    theorem2_radius,
)
from radgraph import cli_io
from radgraph.cli_io import (
    REPORT_KEYS,
    RunConfig,
    emit_solution,
    load_curvature_table,
    main,
    parse_config,
    read_obj,
    read_solution_csv,
    write_report,
)


def _write(path, text):
    path.write_text(text)
    return str(path)


# ---------------------------------------------------------------- configuration


def test_minimal_direct_file(tmp_path):
    cfg = parse_config(_write(tmp_path / "c.yaml", "mode: direct\nfiber_dim: 1\ncurvature: {constant: 1}\n"))
    assert cfg.mode == "direct" and cfg.fiber_dim == 1 and cfg.curvature == {"constant": 1}
    assert cfg.tol == 1e-10 and cfg.max_iters == 50 and cfg.seed == 42 and cfg.lam == 1.0


def test_theorem4_missing_r1(tmp_path):
    p = _write(tmp_path / "c.yaml", "mode: theorem4\ncurvature: {radial: '2/(1+rho)'}\nr2: 2\n")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    assert any("r1" in msg for msg in info.value.problems)


def test_conflicting_curvature_kinds(tmp_path):
    p = _write(tmp_path / "c.yaml", "mode: direct\ncurvature: {constant: 1, table: k.csv}\n")
    with pytest.raises(ConfigError, match="mutually exclusive"):
        parse_config(p)


def test_every_violation_listed(tmp_path):
    p = _write(tmp_path / "c.yaml", "mode: theorem4\nbase_dim: 7\nbogus: 1\nlam: -1\ntol: 0\n")
    with pytest.raises(ConfigError) as info:
        parse_config(p)
    text = "\n".join(info.value.problems)
    for word in ("bogus", "base_dim", "lam", "tol", "r1", "r2", "curvature"):
        assert word in text


def test_parse_error_has_line(tmp_path):
    p = _write(tmp_path / "c.yaml", "mode: direct\ncurvature: {constant: 1\nseed: 3\n")
    with pytest.raises(ConfigError, match=r"c\.yaml:\d+"):
        parse_config(p)
    q = _write(tmp_path / "c.json", '{\n  "mode": "direct",\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match=r"c\.json:3"):
        parse_config(q)


def test_flags_override_file(tmp_path):
    p = _write(tmp_path / "c.yaml", "mode: direct\ncurvature: {constant: 1}\ntol: 1.0e-6\nseed: 1\n")
    cfg = parse_config(p, {"tol": 1e-9, "seed": None, "curvature": "expr:1/rho"})
    assert cfg.tol == 1e-9 and cfg.seed == 1 and cfg.curvature == {"expr": "1/rho"}


def test_unknown_flag_rejected():
    with pytest.raises(ConfigError, match="--frobnicate"):
        parse_config(flags={"frobnicate": 1, "curvature": "constant:1"})


def test_config_echo_round_trip(tmp_path):
    cfg = parse_config(flags={"mode": "theorem4", "curvature": "radial:2/(1+rho)", "r1": 0.5, "r2": 2.0,
                              "fiber_dim": 2, "fiber_res": [8, 16], "mean_pin": "start"})
    rep = cli_io._base_report(cfg, cfg.mode)
    write_report(str(tmp_path / "r.json"), rep)
    echo = json.loads((tmp_path / "r.json").read_text())["config_echo"]
    assert parse_config(data=echo) == cfg


# ---------------------------------------------------------------- outputs


@pytest.mark.parametrize("d,r", [(1, 1.0), (2, 1.0), (1, 2.5), (2, 0.3)])
def test_obj_sphere_radius(tmp_path, d, r):
    g = build_bundle_grid(0, d, fiber_res=16)
    u = ScalarField.constant(g, math.log(r))
    rep = cli_io._base_report(None, "direct")
    paths = emit_solution(u, rep, str(tmp_path / "out"))
    V, F, L = read_obj(paths["obj"][0])
    assert len(V) == g.fiber.size
    assert np.max(np.abs(np.linalg.norm(V, axis=1) / r - 1)) <= 1e-15
    if d == 1:
        assert L and L[0][0] == L[0][-1]
    else:
        assert F.shape[1] == 3
        n = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        assert np.all(np.einsum("ij,ij->i", n, V[F[:, 0]]) > 0)


@given(st.lists(st.floats(-30, 30, allow_nan=False, allow_subnormal=False), min_size=16, max_size=16))
def test_csv_round_trip_bit_identical(tmp_path_factory, vals):
    g = build_bundle_grid(0, 1, fiber_res=16)
    u = ScalarField(np.array(vals), g)
    prefix = str(tmp_path_factory.mktemp("csv") / "sol")
    emit_solution(u, cli_io._base_report(None, "direct"), prefix)
    header, coords, back = read_solution_csv(prefix + ".csv")
    assert header == ["node_index", "theta", "u"]
    assert np.array_equal(back, u.values)
    assert np.array_equal(coords[:, 0], g.angles[:, 0])


def test_report_keys_enforced(tmp_path):
    with pytest.raises(ValueError):
        write_report(str(tmp_path / "r.json"), {"mode": "direct"})


def test_report_seventeen_digits(tmp_path):
    rep = cli_io._base_report(None, "direct")
    rep["residuals"]["x"] = 0.1
    rep["residuals"]["y"] = float("nan")
    write_report(str(tmp_path / "r.json"), rep)
    text = (tmp_path / "r.json").read_text()
    assert "0.10000000000000001" in text
    data = json.loads(text)
    assert list(data) == list(REPORT_KEYS) and data["residuals"]["y"] is None


# ---------------------------------------------------------------- curvature tables


def _table(tmp_path, rows, header="rho,K"):
    return _write(tmp_path / "k.csv", header + "\n" + "\n".join(",".join(repr(float(v)) for v in r) for r in rows) + "\n")


def test_table_constant_one(tmp_path):
    K = load_curvature_table(_table(tmp_path, [(r, 1.0) for r in (0.5, 0.8, 1.0, 1.5, 2.0)]))
    assert np.max(np.abs(K.radial_profile(np.linspace(0.5, 2.0, 50)) - 1)) <= 1e-12


def test_table_rational_radius(tmp_path):
    radii = np.geomspace(0.25, 4.0, 9)
    K = load_curvature_table(_table(tmp_path, [(r, 2 / (1 + r)) for r in radii]))
    assert abs(theorem2_radius(K, 2, (0.3, 3.0)).radius - 1) <= 1e-6


def test_table_zero_entry_names_row(tmp_path):
    with pytest.raises(CurvatureError, match="row 4"):
        load_curvature_table(_table(tmp_path, [(0.5, 1.0), (1.0, 1.0), (1.5, 0.0), (2.0, 1.0)]))


def test_table_inconsistent_grid(tmp_path):
    rows = [(0.0, 0.5, 1.0), (0.0, 1.0, 1.0), (1.0, 0.5, 1.0), (1.0, 1.5, 1.0)]
    with pytest.raises(CurvatureError, match="inconsistent grid"):
        load_curvature_table(_table(tmp_path, rows, "theta,rho,K"))


def test_table_with_fibre_coordinates(tmp_path):
    g = build_bundle_grid(0, 1, fiber_res=8)
    rows = [(float(t), r, (1 + 0.2 * math.cos(t)) / r) for t in g.angles[:, 0] for r in (0.5, 1.0, 2.0, 4.0)]
    K = load_curvature_table(_table(tmp_path, rows, "theta,rho,K"))
    want = (1 + 0.2 * np.cos(g.angles[:, 0])) / 1.3
    assert np.allclose(K.evaluate(g, 1.3), want, rtol=1e-3)


# ---------------------------------------------------------------- command line


def test_cli_solve_direct(tmp_path, capsys):
    prefix = str(tmp_path / "d1")
    code = main(["solve", "--mode", "direct", "--fiber-res", "32", "--curvature",
                 "expr:(1+0.3*cos(theta))/rho^2", "--out-prefix", prefix])
    assert code == 0
    rep = json.loads(open(prefix + ".json").read())
    assert rep["residuals"]["status"] == "converged"
    assert rep["identity_checks"]["curvature_cross_check_max_rel"] <= 0.02


def test_cli_theorem3_reports_c0(tmp_path):
    prefix = str(tmp_path / "t3")
    code = main(["solve", "--mode", "theorem3", "--base-dim", "1", "--base-res", "8", "--fiber-res", "16",
                 "--curvature", "fiber:exp(1)", "--out-prefix", prefix])
    assert code == 0
    rep = json.loads(open(prefix + ".json").read())
    assert rep["monitors"]["c0_bound_satisfied"] is True


def test_cli_solver_failure_writes_report(tmp_path):
    prefix = str(tmp_path / "bad")
    code = main(["solve", "--mode", "theorem3", "--base-dim", "1", "--base-res", "8", "--fiber-res", "16",
                 "--curvature", "fiber:1+0.2*cos(x)", "--out-prefix", prefix])
    assert code == 3
    rep = json.loads(open(prefix + ".json").read())
    assert rep["residuals"]["status"] == "failed" and rep["residuals"]["failure_reason"]


def test_cli_validation_error(tmp_path):
    prefix = str(tmp_path / "inv")
    code = main(["solve", "--mode", "theorem4", "--curvature", "constant:1", "--out-prefix", prefix])
    assert code == 2
    assert json.loads(open(prefix + ".json").read())["residuals"]["status"] == "invalid"


def test_cli_verify_and_radius(tmp_path, capsys):
    assert main(["verify", "--fiber-dim", "2", "--fiber-res", "16", "--out-prefix", str(tmp_path / "v")]) == 0
    assert main(["radius", "--curvature", "radial:2/(1+rho)", "--out-prefix", str(tmp_path / "r")]) == 0
    assert "radius 1" in capsys.readouterr().out


def test_cli_verification_failure(tmp_path, monkeypatch):
    monkeypatch.setattr(cli_io, "theorem1_oracle", lambda k, g: ScalarField.constant(g, 0.5))
    assert main(["verify", "--fiber-res", "16", "--out-prefix", str(tmp_path / "v")]) == 4


def test_cli_converge(tmp_path):
    code = main(["converge", "--fiber-res", "32", "--curvature", "expr:(1+0.3*cos(theta))/rho^2",
                 "--out-prefix", str(tmp_path / "c")])
    assert code == 0
    rep = json.loads(open(tmp_path / "c.json").read())
    assert all(abs(o - 2) <= 0.3 for o in rep["identity_checks"]["convergence"]["orders"])


def test_cli_table_curvature(tmp_path):
    _table(tmp_path, [(r, 1.0 / r) for r in (0.25, 0.5, 1.0, 2.0, 4.0)])
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"mode: direct\ncurvature: {{table: k.csv}}\nmean_pin: 0.3\nfiber_res: 16\n"
                   f"out_prefix: {tmp_path / 'tab'}\n")
    assert main(["solve", "--config", str(cfg)]) == 0
    header, _, u = read_solution_csv(str(tmp_path / "tab.csv"))
    assert np.allclose(u, 0.3, atol=1e-10)
