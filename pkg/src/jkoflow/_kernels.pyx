# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled time march of the finite-volume reference solver."""

import numpy as np
cimport numpy as cnp
from libc.math cimport pow, isfinite, ceil, INFINITY

cnp.import_array()

cdef double ALPHA_FLOOR = 1e-3


cdef inline double _clamp_alpha(double a) nogil:
    if a < ALPHA_FLOOR:
        return ALPHA_FLOOR
    if a > 1.0:
        return 1.0
    return a


cdef inline double _mob(int kind, double[::1] p, double t, double z) nogil:
    cdef double S, a
    if z < 0.0:
        return 0.0
    if kind == 0:
        return p[0] * z
    if kind == 1:
        S = p[0] + p[1] * t
        if z > S:
            return 0.0
        return z * (S - z)
    if kind == 2:
        a = _clamp_alpha(p[1] + p[2] * t)
        return pow(z + p[0], a) - pow(p[0], a)
    a = _clamp_alpha(p[0] + p[1] * t)
    return pow(z, a)


cdef void _rhs(double[::1] u, double t, double dx, int kind, double[::1] p, double cp,
               double cz, double[::1] phi, double[::1] mu, double[::1] out) nogil:
    cdef Py_ssize_t n = u.shape[0], i
    cdef double lap, F, Fprev, inv2 = 1.0 / (dx * dx)
    for i in range(n):
        mu[i] = cz * u[i] + phi[i]
        if cp != 0.0:
            if i == 0:
                lap = u[1] - u[0]
            elif i == n - 1:
                lap = u[n - 2] - u[n - 1]
            else:
                lap = u[i + 1] - 2.0 * u[i] + u[i - 1]
            mu[i] -= cp * lap * inv2
    Fprev = 0.0
    for i in range(n - 1):
        F = _mob(kind, p, t, 0.5 * (u[i] + u[i + 1])) * (mu[i + 1] - mu[i]) / dx
        out[i] = (F - Fprev) / dx
        Fprev = F
    out[n - 1] = -Fprev / dx


def march(u0, double t0, double t1, double dt, double dx, int kind, params, double cp,
          double cz, phi, double neg_tol=1e-6):
    """Heun (SSP-RK2) from ``t0`` to ``t1`` with step ``<= dt``.

    Returns ``(u, steps, clipped_mass, min_value)``.
    """
    cdef double[::1] u = np.array(u0, dtype=np.float64)
    cdef double[::1] p = np.ascontiguousarray(params, dtype=np.float64)
    cdef double[::1] ph = np.ascontiguousarray(phi, dtype=np.float64)
    cdef Py_ssize_t n = u.shape[0], i
    cdef double[::1] k1 = np.empty(n), k2 = np.empty(n), v = np.empty(n), mu = np.empty(n)
    cdef long nsteps = 0, s, steps = 0
    cdef double h = 0.0, t = t0, clipped = 0.0, vmin, lo
    cdef bint bad = False
    vmin = u[0]
    for i in range(n):
        if u[i] < vmin:
            vmin = u[i]
    if t1 > t0:
        nsteps = <long> ceil((t1 - t0) / dt - 1e-12)
        h = (t1 - t0) / nsteps
    with nogil:
        for s in range(nsteps):
            _rhs(u, t, dx, kind, p, cp, cz, ph, mu, k1)
            for i in range(n):
                v[i] = u[i] + h * k1[i]
            _rhs(v, t + h, dx, kind, p, cp, cz, ph, mu, k2)
            lo = 1e300
            for i in range(n):
                u[i] = u[i] + 0.5 * h * (k1[i] + k2[i])
                if not isfinite(u[i]):
                    bad = True
                elif u[i] < lo:
                    lo = u[i]
            t = t0 + (s + 1) * h
            steps += 1
            if bad:
                vmin = -INFINITY
                break
            if lo < 0.0:
                if lo < vmin:
                    vmin = lo
                if lo < -neg_tol:
                    break
                for i in range(n):
                    if u[i] < 0.0:
                        clipped -= u[i] * dx
                        u[i] = 0.0
    return np.asarray(u), steps, clipped, vmin
