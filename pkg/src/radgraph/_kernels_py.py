"""Pure NumPy implementations of the nodal stencil kernels.

These mirror ``_kernels.pyx`` exactly (same stencils, same operation order
where it matters) and are used when the compiled extension is unavailable.
"""

import numpy as np


def circle_derivatives(u, h):
    """Central first and second differences along the last (periodic) axis.

    Parameters
    ----------
    u : ndarray, shape (B, N)
    h : float
        Angular spacing.

    Returns
    -------
    grad, hess : ndarray, shape (B, N)
    """
    u = np.ascontiguousarray(u, dtype=float)
    up = np.roll(u, -1, axis=1)
    dn = np.roll(u, 1, axis=1)
    grad = (up - dn) / (2.0 * h)
    hess = (up - 2.0 * u + dn) / (h * h)
    return grad, hess


def _pad_poles(u):
    # ghost rows: the point across the pole sits half a turn away in longitude
    B, Np, Nt = u.shape
    half = Nt // 2
    pad = np.empty((B, Np + 2, Nt))
    pad[:, 1:-1] = u
    pad[:, 0] = np.roll(u[:, 0], -half, axis=1)
    pad[:, -1] = np.roll(u[:, -1], -half, axis=1)
    return pad


def sphere_derivatives(u, hphi, htheta, sinphi, cosphi):
    """Orthonormal-frame gradient and covariant Hessian on a lat-long grid.

    The frame is ``e1 = d/dphi``, ``e2 = (1/sin phi) d/dtheta``.

    Parameters
    ----------
    u : ndarray, shape (B, Nphi, Ntheta)
    hphi, htheta : float
    sinphi, cosphi : ndarray, shape (Nphi,)

    Returns
    -------
    g1, g2, h11, h12, h22 : ndarray, shape (B, Nphi, Ntheta)
    """
    u = np.ascontiguousarray(u, dtype=float)
    pad = _pad_poles(u)
    up = pad[:, 2:]
    dn = pad[:, :-2]
    s = sinphi[None, :, None]
    c = cosphi[None, :, None]

    u_p = (up - dn) / (2.0 * hphi)
    u_pp = (up - 2.0 * u + dn) / (hphi * hphi)
    u_t = (np.roll(u, -1, axis=2) - np.roll(u, 1, axis=2)) / (2.0 * htheta)
    u_tt = (np.roll(u, -1, axis=2) - 2.0 * u + np.roll(u, 1, axis=2)) / (htheta * htheta)
    u_pt = (
        np.roll(up, -1, axis=2) - np.roll(up, 1, axis=2)
        - np.roll(dn, -1, axis=2) + np.roll(dn, 1, axis=2)
    ) / (4.0 * hphi * htheta)

    cot = c / s
    g1 = u_p
    g2 = u_t / s
    h11 = u_pp
    h12 = (u_pt - cot * u_t) / s
    h22 = u_tt / (s * s) + cot * u_p
    return g1, g2, h11, h12, h22


def block2(g1, g2, h11, h12, h22):
    """Entries, determinant and smallest eigenvalue of ``I + g g^T - H`` (2x2)."""
    a11 = 1.0 + g1 * g1 - h11
    a12 = g1 * g2 - h12
    a22 = 1.0 + g2 * g2 - h22
    det = a11 * a22 - a12 * a12
    half_tr = 0.5 * (a11 + a22)
    rad = np.sqrt(0.25 * (a11 - a22) ** 2 + a12 * a12)
    return a11, a12, a22, det, half_tr - rad
