"""Explicit finite-volume integrator used as an independent oracle.

Solves ``u_t = d/dx( m(t, u) d/dx mu )`` with ``mu`` the discrete first
variation of the energy, a zero flux on both boundary faces, and the face
mobility evaluated at the arithmetic mean of the two adjacent cells.  Time
stepping is Heun's method (SSP-RK2).

Stability bounds used for the default step:

* local energies:    ``dt <= 0.4 dx^2 / (gamma1 sup m)``
* gradient energies: ``dt <= 0.1 dx^4 / (gamma1 sup m)``

(The RK2 stability interval on the negative axis is ``[-2, 0]`` and the
largest eigenvalue of the discrete bi-Laplacian is ``16 / dx^4``, which
caps the fourth-order constant at ``0.125``.)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .grid import DensityField, Grid1D

log = logging.getLogger(__name__)

C_SECOND, C_FOURTH = 0.4, 0.1
NEG_TOL = 1e-6

_KIND_CODES = {"linear": kernels.LINEAR, "logistic": kernels.LOGISTIC,
               "power_eps": kernels.POWER_EPS, "power": kernels.POWER}


class ReferenceStabilityError(RuntimeError):
    pass


@dataclass
class Trajectory:
    grid: Grid1D
    times: np.ndarray
    fields: list
    step_log: list = field(default_factory=list)  # (t_start, t_end, steps, dt)
    mass_log: list = field(default_factory=list)
    clip_log: list = field(default_factory=list)  # (t_end, clipped mass, min value)
    backend: str = ""

    def values(self) -> np.ndarray:
        return np.array([u.values for u in self.fields])

    @property
    def mass_drift(self) -> float:
        m = np.asarray(self.mass_log)
        return float(np.max(np.abs(m - m[0]))) if m.size else 0.0


def _kernel_params(mspec):
    p = mspec.params
    if mspec.kind == "linear":
        return [p["C"]]
    if mspec.kind == "logistic":
        return [p["S0"], p["growth"]]
    if mspec.kind == "power_eps":
        return [p["eps"], p["alpha0"], p["alpha_rate"]]
    if mspec.kind == "power":
        return [p["alpha0"], p["alpha_rate"]]
    raise KeyError(mspec.kind)


def sup_mobility(mspec, t0: float, t1: float, zmax: float) -> float:
    """Sampled ``sup m`` over ``[t0, t1] x [0, min(zmax, S)]``."""
    best = 0.0
    for t in np.linspace(t0, t1, 5):
        hi = min(zmax, mspec.S(t))
        z = np.linspace(0.0, hi, 401)
        best = max(best, float(np.max(mspec.m(t, z))))
    return best


def stable_dt(espec, mspec, grid: Grid1D, T: float, u0: DensityField, order: int) -> float:
    umax = float(np.max(u0.values))
    zmax = umax if order == 2 else 2.0 * umax
    msup = max(sup_mobility(mspec, 0.0, T, zmax), 1e-300)
    if order == 2:
        return C_SECOND * grid.dx**2 / (espec.gamma1 * msup)
    return C_FOURTH * grid.dx**4 / (espec.gamma1 * msup)


def _generic_march(u0, t0, t1, dt, espec, mspec, grid):
    """Same Heun march for arbitrary energy and mobility bundles."""
    dx = grid.dx

    def rhs(u, t):
        mu = espec.first_variation(DensityField(grid, np.maximum(u, 0.0)))
        F = np.zeros(u.size + 1)
        F[1:-1] = mspec.m(t, 0.5 * (u[:-1] + u[1:])) * np.diff(mu) / dx
        return np.diff(F) / dx

    u = np.array(u0, dtype=float)
    nsteps = int(math.ceil((t1 - t0) / dt - 1e-12)) if t1 > t0 else 0
    h = (t1 - t0) / nsteps if nsteps else 0.0
    clipped, vmin, steps = 0.0, float(u.min()), 0
    for s in range(nsteps):
        t = t0 + s * h
        k1 = rhs(u, t)
        k2 = rhs(u + h * k1, t + h)
        u = u + 0.5 * h * (k1 + k2)
        steps += 1
        lo = float(u.min())
        if not math.isfinite(lo):
            return u, steps, clipped, -math.inf
        if lo < 0:
            vmin = min(vmin, lo)
            if lo < -NEG_TOL:
                break
            clipped += float(-u[u < 0].sum() * dx)
            u[u < 0] = 0.0
    return u, steps, clipped, vmin


def reference_solve(u0: DensityField, espec, mspec, T: float, dt: float | None = None,
                    grid: Grid1D | None = None, order: int | None = None,
                    output_times=None, n_out: int = 10, check_stability: bool = True,
                    backend: str | None = None) -> Trajectory:
    """Integrate from ``t = 0`` to ``T`` and record the requested output times.

    Parameters
    ----------
    dt : float, optional
        Maximal step; defaults to the stability bound.  Each output interval
        is split into equal steps no longer than ``dt``.
    order : {2, 4}, optional
        Inferred from the energy class when omitted.
    output_times : sequence of float, optional
        Defaults to ``n_out`` equally spaced times in ``(0, T]``.
    backend : {"compiled", "python"}, optional
        Overrides the import-time kernel selection (builtin kinds only).

    Raises
    ------
    ValueError
        If ``dt`` exceeds the stability bound while ``check_stability`` is set.
    ReferenceStabilityError
        If the solution undershoots below ``-1e-6`` or stops being finite.
    """
    grid = grid or u0.grid
    if grid != u0.grid:
        raise ValueError("initial datum lives on a different grid")
    expected = 2 if espec.variant == "E1" else 4
    order = order or expected
    if order != expected:
        raise ValueError(f"order {order} does not match energy class {espec.variant}")
    bound = stable_dt(espec, mspec, grid, T, u0, order)
    if dt is None:
        dt = bound
    elif check_stability and dt > bound * (1 + 1e-9):
        raise ValueError(f"dt = {dt:.3g} exceeds the stability bound {bound:.3g}")
    if output_times is None:
        output_times = np.linspace(0.0, T, n_out + 1)[1:]
    out = sorted({float(t) for t in output_times if 0 < t <= T + 1e-14})

    fast = mspec.kind in _KIND_CODES and espec.quadratic is not None
    if fast:
        cp, cz = espec.quadratic
        phi = espec.phi(grid)
        params = _kernel_params(mspec)
        code = _KIND_CODES[mspec.kind]
        if backend == "python":
            march, name = kernels.march_python, "python"
        elif backend == "compiled":
            if kernels.march_compiled is None:
                raise RuntimeError("compiled kernels are not available")
            march, name = kernels.march_compiled, "compiled"
        else:
            march, name = kernels.march, kernels.BACKEND
    else:
        name = "generic"

    traj = Trajectory(grid, np.array([0.0] + out), [u0], backend=name)
    traj.mass_log.append(float(grid.dx * u0.values.sum()))
    u, t = u0.values.copy(), 0.0
    for t_next in out:
        if fast:
            u, steps, clipped, vmin = march(u, t, t_next, dt, grid.dx, code, params,
                                            cp, cz, phi, NEG_TOL)
            u = np.asarray(u)
        else:
            u, steps, clipped, vmin = _generic_march(u, t, t_next, dt, espec, mspec, grid)
        traj.step_log.append((t, t_next, int(steps), (t_next - t) / max(int(steps), 1)))
        if not math.isfinite(vmin) or vmin < -NEG_TOL:
            raise ReferenceStabilityError(
                f"undershoot {vmin:.3g} in ({t:.6g}, {t_next:.6g}] after {steps} steps "
                f"of size {dt:.3g}; reduce dt")
        if clipped > 0:
            traj.clip_log.append((t_next, clipped, vmin))
            log.info("clipped negative mass %.3g (min %.3g) before t=%.6g", clipped, vmin, t_next)
        traj.fields.append(DensityField(grid, np.maximum(u, 0.0)))
        traj.mass_log.append(float(grid.dx * np.sum(u)))
        t = t_next
    return traj


# --------------------------------------------------------------------------
# comparison


@dataclass
class ErrorReport:
    times: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    linf: np.ndarray
    l2_time: float  # sqrt(sum_n ||a_n - b_n||^2) over comparison times
    rel_l2_time: float  # l2_time / sqrt(sum_n ||b_n||^2)

    def to_dict(self) -> dict:
        return {"times": self.times.tolist(), "l1": self.l1.tolist(), "l2": self.l2.tolist(),
                "linf": self.linf.tolist(), "l2_time": self.l2_time,
                "rel_l2_time": self.rel_l2_time}


def _sampler(obj):
    from .jko import DiscreteSolution

    if isinstance(obj, DiscreteSolution):
        return obj.grid, obj.times, obj.at
    if isinstance(obj, Trajectory):
        lookup = {float(t): u for t, u in zip(obj.times, obj.fields)}

        def at(t):
            for tt, u in lookup.items():
                if abs(tt - t) <= 1e-12 * max(1.0, abs(t)):
                    return u
            raise ValueError(f"trajectory has no output at t={t}")

        return obj.grid, obj.times, at
    raise TypeError("expected a Trajectory or DiscreteSolution")


def compare_trajectories(a, b, times=None) -> ErrorReport:
    """L1, L2 and Linf differences of ``a`` against ``b`` (``b`` normalizes).

    Scheme solutions are sampled by their piecewise-constant interpolation.
    Default comparison times are ``b``'s recorded times.
    """
    ga, ta, at_a = _sampler(a)
    gb, tb, at_b = _sampler(b)
    if ga != gb:
        raise ValueError("incompatible grids")
    ts = np.asarray(tb if times is None else times, dtype=float)
    dx = ga.dx
    l1, l2, li, nb = [], [], [], []
    for t in ts:
        d = at_a(t).values - at_b(t).values
        l1.append(dx * np.sum(np.abs(d)))
        l2.append(math.sqrt(dx * np.sum(d * d)))
        li.append(float(np.max(np.abs(d))))
        nb.append(dx * np.sum(at_b(t).values ** 2))
    l2 = np.array(l2)
    agg = math.sqrt(float(np.sum(l2**2)))
    ref = math.sqrt(float(np.sum(nb)))
    return ErrorReport(ts, np.array(l1), l2, np.array(li), agg, agg / ref if ref > 0 else math.inf)
