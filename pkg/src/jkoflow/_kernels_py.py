"""Pure numpy versions of the compiled kernels (same signatures and results)."""

import numpy as np

LINEAR, LOGISTIC, POWER_EPS, POWER = 0, 1, 2, 3
ALPHA_FLOOR = 1e-3


def mobility_values(kind, params, t, z):
    z = np.asarray(z, dtype=float)
    if kind == LINEAR:
        out = params[0] * z
        return np.where(z >= 0, out, 0.0)
    if kind == LOGISTIC:
        S = params[0] + params[1] * t
        return np.where((z >= 0) & (z <= S), z * (S - z), 0.0)
    a = min(max(params[1] + params[2] * t, ALPHA_FLOOR), 1.0) if kind == POWER_EPS else \
        min(max(params[0] + params[1] * t, ALPHA_FLOOR), 1.0)
    zp = np.maximum(z, 0.0)
    if kind == POWER_EPS:
        eps = params[0]
        return (zp + eps) ** a - eps**a
    return zp**a


def _rhs(u, t, dx, kind, params, cp, cz, phi, out):
    n = u.shape[0]
    mu = cz * u + phi
    if cp != 0.0:
        lap = np.empty(n)
        lap[1:-1] = u[2:] - 2.0 * u[1:-1] + u[:-2]
        lap[0] = u[1] - u[0]
        lap[-1] = u[-2] - u[-1]
        mu = mu - cp * lap / (dx * dx)
    mf = mobility_values(kind, params, t, 0.5 * (u[:-1] + u[1:]))
    F = np.zeros(n + 1)
    F[1:-1] = mf * (mu[1:] - mu[:-1]) / dx
    out[:] = (F[1:] - F[:-1]) / dx
    return out


def march(u0, t0, t1, dt, dx, kind, params, cp, cz, phi, neg_tol=1e-6):
    """Heun (SSP-RK2) from ``t0`` to ``t1`` with step ``<= dt``.

    Returns ``(u, steps, clipped_mass, min_value)``.  ``min_value`` below
    ``-neg_tol`` signals instability, and the march stops right there.
    """
    u = np.array(u0, dtype=float)
    params = np.asarray(params, dtype=float)
    phi = np.asarray(phi, dtype=float)
    n = u.shape[0]
    k1, k2 = np.empty(n), np.empty(n)
    t = t0
    steps = 0
    clipped = 0.0
    vmin = float(u.min())
    nsteps = int(np.ceil((t1 - t0) / dt - 1e-12)) if t1 > t0 else 0
    h = (t1 - t0) / nsteps if nsteps else 0.0
    for s in range(nsteps):
        _rhs(u, t, dx, kind, params, cp, cz, phi, k1)
        v = u + h * k1
        _rhs(v, t + h, dx, kind, params, cp, cz, phi, k2)
        u = u + 0.5 * h * (k1 + k2)
        t = t0 + (s + 1) * h
        steps += 1
        lo = float(u.min())
        if not np.isfinite(lo):
            vmin = -np.inf
            break
        if lo < 0.0:
            vmin = min(vmin, lo)
            if lo < -neg_tol or not np.isfinite(lo):
                break
            neg = u < 0
            clipped += float(-u[neg].sum() * dx)
            u[neg] = 0.0
    return u, steps, clipped, vmin
