# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled nodal stencil kernels.

Fused single-pass versions of the routines in ``_kernels_py``; the two
modules must agree to round-off.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def circle_derivatives(u, double h):
    cdef const double[:, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef Py_ssize_t B = uv.shape[0], N = uv.shape[1]
    grad = np.empty((B, N))
    hess = np.empty((B, N))
    cdef double[:, ::1] g = grad
    cdef double[:, ::1] hh = hess
    cdef Py_ssize_t b, k, kp, km
    cdef double inv2h = 1.0 / (2.0 * h), invh2 = 1.0 / (h * h)
    cdef double up, dn, c
    with nogil:
        for b in range(B):
            for k in range(N):
                kp = k + 1 if k + 1 < N else 0
                km = k - 1 if k > 0 else N - 1
                up = uv[b, kp]
                dn = uv[b, km]
                c = uv[b, k]
                g[b, k] = (up - dn) * inv2h
                hh[b, k] = (up - 2.0 * c + dn) * invh2
    return grad, hess


def sphere_derivatives(u, double hphi, double htheta, sinphi, cosphi):
    cdef const double[:, :, ::1] uv = np.ascontiguousarray(u, dtype=np.float64)
    cdef const double[::1] sp = np.ascontiguousarray(sinphi, dtype=np.float64)
    cdef const double[::1] cp = np.ascontiguousarray(cosphi, dtype=np.float64)
    cdef Py_ssize_t B = uv.shape[0], Np = uv.shape[1], Nt = uv.shape[2]
    cdef Py_ssize_t half = Nt // 2
    out = [np.empty((B, Np, Nt)) for _ in range(5)]
    cdef double[:, :, ::1] g1 = out[0]
    cdef double[:, :, ::1] g2 = out[1]
    cdef double[:, :, ::1] h11 = out[2]
    cdef double[:, :, ::1] h12 = out[3]
    cdef double[:, :, ::1] h22 = out[4]
    cdef Py_ssize_t b, j, k, kp, km, ju, jd, su, sd
    cdef double c0, vu, vd, vkp, vkm, uukp, uukm, ddkp, ddkm
    cdef double u_p, u_pp, u_t, u_tt, u_pt, s, cot
    cdef double i2hp = 1.0 / (2.0 * hphi), ihp2 = 1.0 / (hphi * hphi)
    cdef double i2ht = 1.0 / (2.0 * htheta), iht2 = 1.0 / (htheta * htheta)
    cdef double i4 = 1.0 / (4.0 * hphi * htheta)
    with nogil:
        for b in range(B):
            for j in range(Np):
                s = sp[j]
                cot = cp[j] / s
                # row above/below with across-pole reflection (shift by half a turn)
                if j + 1 < Np:
                    ju = j + 1
                    su = 0
                else:
                    ju = j
                    su = half
                if j > 0:
                    jd = j - 1
                    sd = 0
                else:
                    jd = j
                    sd = half
                for k in range(Nt):
                    kp = k + 1 if k + 1 < Nt else 0
                    km = k - 1 if k > 0 else Nt - 1
                    c0 = uv[b, j, k]
                    vu = uv[b, ju, (k + su) % Nt]
                    vd = uv[b, jd, (k + sd) % Nt]
                    vkp = uv[b, j, kp]
                    vkm = uv[b, j, km]
                    uukp = uv[b, ju, (kp + su) % Nt]
                    uukm = uv[b, ju, (km + su) % Nt]
                    ddkp = uv[b, jd, (kp + sd) % Nt]
                    ddkm = uv[b, jd, (km + sd) % Nt]
                    u_p = (vu - vd) * i2hp
                    u_pp = (vu - 2.0 * c0 + vd) * ihp2
                    u_t = (vkp - vkm) * i2ht
                    u_tt = (vkp - 2.0 * c0 + vkm) * iht2
                    u_pt = (uukp - uukm - ddkp + ddkm) * i4
                    g1[b, j, k] = u_p
                    g2[b, j, k] = u_t / s
                    h11[b, j, k] = u_pp
                    h12[b, j, k] = (u_pt - cot * u_t) / s
                    h22[b, j, k] = u_tt / (s * s) + cot * u_p
    return tuple(out)


def block2(g1, g2, h11, h12, h22):
    shape = np.shape(g1)
    cdef const double[::1] G1 = np.ascontiguousarray(g1, dtype=np.float64).ravel()
    cdef const double[::1] G2 = np.ascontiguousarray(g2, dtype=np.float64).ravel()
    cdef const double[::1] H11 = np.ascontiguousarray(h11, dtype=np.float64).ravel()
    cdef const double[::1] H12 = np.ascontiguousarray(h12, dtype=np.float64).ravel()
    cdef const double[::1] H22 = np.ascontiguousarray(h22, dtype=np.float64).ravel()
    cdef Py_ssize_t n = G1.shape[0], i
    out = [np.empty(n) for _ in range(5)]
    cdef double[::1] A11 = out[0]
    cdef double[::1] A12 = out[1]
    cdef double[::1] A22 = out[2]
    cdef double[::1] DET = out[3]
    cdef double[::1] MINE = out[4]
    cdef double a11, a12, a22, d
    with nogil:
        for i in range(n):
            a11 = 1.0 + G1[i] * G1[i] - H11[i]
            a12 = G1[i] * G2[i] - H12[i]
            a22 = 1.0 + G2[i] * G2[i] - H22[i]
            A11[i] = a11
            A12[i] = a12
            A22[i] = a22
            DET[i] = a11 * a22 - a12 * a12
            d = a11 - a22
            MINE[i] = 0.5 * (a11 + a22) - sqrt(0.25 * d * d + a12 * a12)
    return tuple(o.reshape(shape) for o in out)
