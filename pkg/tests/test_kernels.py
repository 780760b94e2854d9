import numpy as np
import pytest

from radgraph import _kernels_py, build_bundle_grid, kernels

cy = pytest.importorskip("radgraph._kernels")


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), 1e-300))


@pytest.mark.parametrize("B,N", [(1, 16), (4, 64), (9, 33)])
def test_circle_backends_agree(B, N):
    u = np.random.default_rng(B * N).standard_normal((B, N))
    h = 2 * np.pi / N
    for a, b in zip(_kernels_py.circle_derivatives(u, h), cy.circle_derivatives(u, h)):
        assert _rel(a, b) <= 1e-13


@pytest.mark.parametrize("B,Np", [(1, 8), (3, 16), (2, 32)])
def test_sphere_backends_agree(B, Np):
    Nt = 2 * Np
    phi = (np.arange(Np) + 0.5) * np.pi / Np
    u = np.random.default_rng(Np).standard_normal((B, Np, Nt))
    args = (u, np.pi / Np, 2 * np.pi / Nt, np.sin(phi), np.cos(phi))
    for a, b in zip(_kernels_py.sphere_derivatives(*args), cy.sphere_derivatives(*args)):
        assert _rel(a, b) <= 1e-13


def test_block2_backends_agree():
    a = np.random.default_rng(3).standard_normal((5, 1000))
    for x, y in zip(_kernels_py.block2(*a), cy.block2(*a)):
        assert _rel(x, y) <= 1e-13


def test_block2_closed_form():
    g1, g2, h11, h12, h22 = np.array([[0.3], [-0.2], [0.1], [0.05], [-0.4]])
    A = np.eye(2) + np.outer([g1[0], g2[0]], [g1[0], g2[0]]) - np.array([[h11[0], h12[0]], [h12[0], h22[0]]])
    a11, a12, a22, det, mineig = kernels.block2(g1, g2, h11, h12, h22)
    assert np.allclose([a11[0], a12[0], a22[0]], [A[0, 0], A[0, 1], A[1, 1]], atol=1e-15)
    assert det[0] == pytest.approx(np.linalg.det(A), abs=1e-14)
    assert mineig[0] == pytest.approx(np.linalg.eigvalsh(A)[0], abs=1e-14)


def test_readonly_input_accepted():
    u = np.linspace(0, 1, 32).reshape(1, 32)
    u.setflags(write=False)
    g, _ = kernels.circle_derivatives(u, 0.1)
    assert g.shape == (1, 32)


@pytest.mark.parametrize("n,d,b,f", [(0, 1, 16, 64), (1, 1, 8, 16), (0, 2, 16, 16), (1, 2, 8, 8)])
def test_kernels_match_sparse_operators(n, d, b, f):
    grid = build_bundle_grid(n, d, base_res=b, fiber_res=f)
    v = np.random.default_rng(1).standard_normal(grid.size)
    g, H = grid.vertical_derivatives(v)
    for a in range(d):
        assert np.max(np.abs(g[a] - grid.Dv[a] @ v)) <= 1e-9 * np.max(np.abs(g[a]))
        for c in range(d):
            assert np.max(np.abs(H[a, c] - grid.Hv[a][c] @ v)) <= 1e-9 * np.max(np.abs(H[a, c]))


def test_env_var_forces_fallback():
    import os
    import subprocess
    import sys

    env = dict(os.environ, RADGRAPH_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import radgraph; print(radgraph.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
