"""Shared oracles for the test modules."""

import numpy as np

from radgraph import (
    ScalarField,
    linearize_horizontal,
    linearize_vertical,
    residual_theorem3,
    seeded_test_fields,
)


def admissible_fields(grid, count=5, seed=42, amplitude=0.1):
    return [f.on(grid) for f in seeded_test_fields(grid.n, grid.d, count, seed=seed, amplitude=amplitude)]


def linearization_errors(u, w, f, lam=1.0, t=1.0, eps=1e-5):
    """Relative max-norm gaps between assembled actions and central differences.

    Returns ``(vertical, horizontal)``; ``horizontal`` is ``None`` when n = 0.
    """
    grid = u.grid
    up = ScalarField(u.values + eps * w.values, grid)
    um = ScalarField(u.values - eps * w.values, grid)
    rp, rm = residual_theorem3(up, f, lam, t, form="log"), residual_theorem3(um, f, lam, t, form="log")
    fd_v = (rp[1] - rm[1]) / (2 * eps)
    ev = np.max(np.abs(linearize_vertical(u, lam, t)(w) - fd_v)) / np.max(np.abs(fd_v))
    eh = None
    if grid.n:
        fd_h = (rp[0] - rm[0]) / (2 * eps)
        eh = np.max(np.abs(linearize_horizontal(u)(w) - fd_h)) / np.max(np.abs(fd_h))
    return float(ev), (None if eh is None else float(eh))
