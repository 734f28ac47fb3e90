"""Dynamic transport distance with nonlinear mobility on a staggered grid.

A path consists of density layers ``rho^0..rho^K`` on cells and momentum
layers ``w^0..w^{K-1}`` on faces, tied by the discrete continuity equation

    (rho^{k+1} - rho^k) / ds + div w^k = 0,      ds = 1/K,

with zero momentum on the two boundary faces.  The action is

    ds * dx * sum_{k, faces} |w^k|^2 / m(t, avg4(rho)^k),

where ``avg4`` is the mean of the two adjacent cells in the two adjacent
layers.  The convex program is solved by a primal log-barrier method.  Each
Newton step solves one sparse KKT system, so the continuity equation holds
to linear-solver precision at every iterate.  The same machinery, with the
last layer free and an energy added, solves one minimizing-movement step
(see :mod:`jkoflow.jko`).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import DensityField, Grid1D

log = logging.getLogger(__name__)

INF = math.inf


def action(mspec, t: float, rho, w):
    """Perspective integrand ``w**2 / m(t, rho)`` with ``0/0 = 0``.

    Returns ``+inf`` where ``w != 0`` but the mobility vanishes.
    """
    rho = np.asarray(rho, dtype=float)
    w = np.asarray(w, dtype=float)
    mv = np.asarray(mspec.m(t, rho), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(mv > 0, w * w / np.where(mv > 0, mv, 1.0), np.where(w == 0, 0.0, INF))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class TransportPath:
    """Density layers ``rho`` (shape ``(K+1, N)``) and momenta ``w`` (``(K, N+1)``)."""

    grid: Grid1D
    rho: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return self.w.shape[0]

    @property
    def ds(self) -> float:
        return 1.0 / self.K

    def continuity_residual(self) -> float:
        dx = self.grid.dx
        r = np.diff(self.rho, axis=0) / self.ds + np.diff(self.w, axis=1) / dx
        return float(np.max(np.abs(r)))

    def layer_masses(self) -> np.ndarray:
        return self.grid.dx * self.rho.sum(axis=1)

    def face_density(self) -> np.ndarray:
        """``avg4`` on interior faces, shape ``(K, N-1)``."""
        r = self.rho
        return 0.25 * (r[:-1, :-1] + r[:-1, 1:] + r[1:, :-1] + r[1:, 1:])

    def action_value(self, mspec, t: float) -> float:
        a = action(mspec, t, self.face_density(), self.w[:, 1:-1])
        return float(self.ds * self.grid.dx * np.sum(a))


@dataclass
class MetricResult:
    value: float
    path: Optional[TransportPath]
    iterations: int = 0
    residual: float = 0.0
    gap: float = 0.0
    converged: bool = True
    trace: list = field(default_factory=list)

    @property
    def stats(self) -> dict:
        return {"iterations": self.iterations, "residual": self.residual, "gap": self.gap,
                "converged": self.converged}


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# barrier method


class BarrierProgram:
    """Convex transport program on fixed grid, mobility time and layer count.

    Unknowns are the free density layers (``1..K-1``, or ``1..K`` when the
    endpoint is free) followed by the interior-face momenta of all ``K``
    momentum layers.

    Parameters
    ----------
    end : ndarray or None
        Pinned last layer, or ``None`` for a free endpoint penalized by
        ``energy``.
    weight : float
        Multiplier of the action (``1/(2 tau)`` for a scheme step).
    """

    def __init__(self, grid: Grid1D, mspec, t: float, start, K: int, end=None,
                 energy=None, weight: float = 1.0):
        if K < 2:
            raise ValueError("need at least two inner steps")
        self.grid, self.mspec, self.t, self.K = grid, mspec, float(t), int(K)
        self.N = grid.cells
        self.start = np.asarray(start, dtype=float)
        self.end = None if end is None else np.asarray(end, dtype=float)
        self.energy = energy
        self.weight = float(weight)
        if self.end is None and energy is None:
            raise ValueError("a free endpoint needs an energy")
        self.S = mspec.S(self.t)
        self.free_layers = self.K - 1 if self.end is not None else self.K
        self.nR = self.free_layers * self.N
        self.nW = self.K * (self.N - 1)
        self.n = self.nR + self.nW
        self.n_ineq = self.nR * (2 if math.isfinite(self.S) else 1)
        self.ds = 1.0 / self.K
        self._build_constraints()
        self._build_face_maps()

    # -- structure ----------------------------------------------------------

    def _build_constraints(self):
        N, K, dx, ds = self.N, self.K, self.grid.dx, self.ds
        # divergence on interior-face momenta
        Dm = sp.diags([np.ones(N - 1), -np.ones(N - 1)], [0, -1], shape=(N, N - 1)) / dx
        I = sp.identity(N, format="csr")
        blocks = []
        for k in range(K):
            rowR = [None] * self.free_layers
            if k >= 1:
                rowR[k - 1] = -I
            if k + 1 <= self.free_layers:
                rowR[k] = I
            rowW = [None] * K
            rowW[k] = ds * Dm
            row = [b if b is not None else sp.csr_matrix((N, N)) for b in rowR]
            row += [b if b is not None else sp.csr_matrix((N, N - 1)) for b in rowW]
            blocks.append(row)
        A = sp.bmat(blocks, format="csr")
        b = np.zeros(K * N)
        b[:N] = self.start
        if self.end is not None:
            b[(K - 1) * N:] = -self.end
            # rows add up to a mass identity; drop one
            keep = np.ones(K * N, dtype=bool)
            keep[-1] = False
            A, b = A[keep], b[keep]
        self.A, self.b = A.tocsr(), b

    def _build_face_maps(self):
        N, K = self.N, self.K
        k = np.repeat(np.arange(K), N - 1)
        j = np.tile(np.arange(1, N), K)  # interior face j sits between cells j-1, j
        cells = np.stack([[k, j - 1], [k, j], [k + 1, j - 1], [k + 1, j]])  # (4, 2, F)
        lay, cell = cells[:, 0], cells[:, 1]
        idx = np.where((lay >= 1) & (lay <= self.free_layers), (lay - 1) * N + cell, -1)
        self.face_cells = idx.T  # (F, 4) variable index or -1 if pinned
        self.face_lay, self.face_cell = lay.T, cell.T
        self.w_index = self.nR + np.arange(K * (N - 1))

    def layers(self, x) -> np.ndarray:
        R = np.empty((self.K + 1, self.N))
        R[0] = self.start
        R[1:self.free_layers + 1] = x[:self.nR].reshape(self.free_layers, self.N)
        if self.end is not None:
            R[-1] = self.end
        return R

    def path(self, x) -> TransportPath:
        W = np.zeros((self.K, self.N + 1))
        W[:, 1:-1] = x[self.nR:].reshape(self.K, self.N - 1)
        return TransportPath(self.grid, self.layers(x), W)

    def face_density(self, x):
        R = self.layers(x)
        return 0.25 * R[self.face_lay, self.face_cell].sum(axis=1)

    # -- objective ----------------------------------------------------------

    def _scale(self):
        return self.weight * self.ds * self.grid.dx

    def action_sum(self, x) -> float:
        a = self.face_density(x)
        w = x[self.nR:]
        mv = self.mspec.m(self.t, a)
        if np.any(mv <= 0):
            return INF
        return float(self.ds * self.grid.dx * np.sum(w * w / mv))

    def _endpoint(self, x):
        return DensityField(self.grid, x[self.nR - self.N:self.nR])

    def inside(self, x) -> bool:
        r = x[:self.nR]
        if np.any(r <= 0):
            return False
        return not (math.isfinite(self.S) and np.any(r >= self.S))

    def merit(self, x, mu) -> float:
        if not self.inside(x):
            return INF
        r = x[:self.nR]
        val = self.weight * self.action_sum(x) - mu * np.sum(np.log(r))
        if math.isfinite(self.S):
            val -= mu * np.sum(np.log(self.S - r))
        if self.end is None:
            val += self.energy.value(self._endpoint(x))
        return float(val)

    def grad_hess(self, x, mu):
        c = self._scale()
        a = self.face_density(x)
        w = x[self.nR:]
        m = self.mspec.m(self.t, a)
        dm = self.mspec.dm(self.t, a)
        d2m = self.mspec.d2m(self.t, a)
        g = np.zeros(self.n)
        ga = -w * w * dm / (m * m)
        g[self.nR:] += c * 2.0 * w / m
        fc = self.face_cells
        for q in range(4):
            sel = fc[:, q] >= 0
            np.add.at(g, fc[sel, q], c * 0.25 * ga[sel])
        Hww = c * 2.0 / m
        Hwa = c * (-2.0 * w * dm / (m * m))
        Haa = c * w * w * (2.0 * dm * dm - m * d2m) / m**3
        rows, cols, vals = [self.w_index], [self.w_index], [Hww]
        for q in range(4):
            sq = fc[:, q] >= 0
            rows += [fc[sq, q], self.w_index[sq]]
            cols += [self.w_index[sq], fc[sq, q]]
            vals += [0.25 * Hwa[sq]] * 2
            for p in range(4):
                sp_ = sq & (fc[:, p] >= 0)
                rows.append(fc[sp_, q])
                cols.append(fc[sp_, p])
                vals.append(Haa[sp_] / 16.0)
        r = x[:self.nR]
        g[:self.nR] -= mu / r
        diag = mu / (r * r)
        if math.isfinite(self.S):
            g[:self.nR] += mu / (self.S - r)
            diag = diag + mu / (self.S - r) ** 2
        rows.append(np.arange(self.nR))
        cols.append(np.arange(self.nR))
        vals.append(diag)
        H = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(self.n, self.n))
        if self.end is None:
            u = self._endpoint(x)
            off = self.nR - self.N
            g[off:self.nR] += self.grid.dx * self.energy.first_variation(u)
            He = sp.csr_matrix(self.energy.hessian(u))
            He = sp.csr_matrix((He.data, He.indices + off, He.indptr), shape=(self.N, self.n))
            H = H + sp.vstack([sp.csr_matrix((off, self.n)), He,
                               sp.csr_matrix((self.n - self.nR, self.n))], format="csr")
        return g, H

    # -- driver -------------------------------------------------------------

    def solve(self, x0, tol: float = 1e-8, max_iter: int = 400, mu0: Optional[float] = None,
              kappa: float = 30.0):
        """Barrier path following; returns ``(x, stats)``.

        Terminates when the barrier gap bound ``mu * n_ineq`` falls below
        ``tol`` times the objective scale and the last centering converged.
        """
        x = np.array(x0, dtype=float)
        if not self.inside(x):
            raise SolverError("starting point is not strictly inside the value space")
        m_eq = self.A.shape[0]
        obj0 = abs(self.merit(x, 0.0))
        scale = max(obj0, 1e-6)
        mu = mu0 if mu0 is not None else scale / self.n_ineq
        mu_final = tol * scale / self.n_ineq
        it, stage_done, trace = 0, False, []
        while it < max_iter:
            g, H = self.grad_hess(x, mu)
            r = self.b - self.A @ x
            K = sp.bmat([[H, self.A.T], [self.A, None]], format="csc")
            try:
                lu = splu(K, permc_spec="COLAMD")
                sol = lu.solve(np.concatenate([-g, r]))
            except RuntimeError as exc:  # singular factorization
                raise SolverError(f"KKT factorization failed: {exc}") from exc
            dx = sol[:self.n]
            it += 1
            dec = float(-g @ dx)
            if not math.isfinite(dec):
                raise SolverError("non-finite Newton decrement")
            # largest strictly feasible step
            rr, dr = x[:self.nR], dx[:self.nR]
            amax = 1.0
            neg = dr < 0
            if np.any(neg):
                amax = min(amax, 0.99 * float(np.min(-rr[neg] / dr[neg])))
            if math.isfinite(self.S):
                pos = dr > 0
                if np.any(pos):
                    amax = min(amax, 0.99 * float(np.min((self.S - rr[pos]) / dr[pos])))
            alpha = amax
            f0 = self.merit(x, mu)
            while alpha > 1e-14:
                xn = x + alpha * dx
                fn = self.merit(xn, mu)
                if fn <= f0 - 0.25 * alpha * max(dec, 0.0) or (
                        abs(fn - f0) <= 1e-15 * max(1.0, abs(f0)) and dec <= 1e-13):
                    break
                alpha *= 0.5
            else:
                xn = x + alpha * dx
            x = xn
            trace.append((it, mu, dec, alpha))
            centered = dec / 2.0 <= max(1e-3 * mu * self.n_ineq ** 0.5, 1e-15 * scale)
            if centered and alpha >= amax * 0.999 or dec / 2.0 <= 1e-16 * scale:
                if mu <= mu_final:
                    stage_done = True
                    break
                mu = max(mu / kappa, mu_final)
        resid = float(np.max(np.abs(self.A @ x - self.b))) if m_eq else 0.0
        return x, {"iterations": it, "residual": resid, "gap": mu * self.n_ineq,
                   "converged": stage_done, "trace": trace}


def _cumulative_momentum(R, dx, ds):
    """Interior momenta solving the continuity equation for given layers."""
    delta = np.diff(R, axis=0)
    # w_{j} = -(dx/ds) sum_{i<j} delta_i on interior faces
    return -(dx / ds) * np.cumsum(delta, axis=1)[:, :-1]


def initial_point(prog: BarrierProgram, blend: float = 0.05):
    """Strictly feasible start.

    Pinned ends: linear interpolation pulled toward the uniform density by
    ``blend * sin(pi k / K)``.  Free end: linear interpolation toward
    ``(1 - blend) start + blend * uniform``.
    """
    K, N = prog.K, prog.N
    U = np.full(N, 1.0 / prog.grid.length)
    s = np.arange(K + 1) / K
    if prog.end is not None:
        lin = (1 - s)[:, None] * prog.start + s[:, None] * prog.end
        beta = blend * np.sin(np.pi * s)
        R = (1 - beta)[:, None] * lin + beta[:, None] * U
        R[-1] = prog.end
    else:
        target = (1 - blend) * prog.start + blend * U
        R = (1 - s)[:, None] * prog.start + s[:, None] * target
    R[0] = prog.start
    W = _cumulative_momentum(R, prog.grid.dx, prog.ds)
    return np.concatenate([R[1:prog.free_layers + 1].ravel(), W.ravel()])


def _check_value_space(mspec, t, *fields, tol=1e-8):
    S = mspec.S(t)
    return all(np.max(f) <= S + tol for f in fields)


def bb_distance_squared(mspec, t: float, u0: DensityField, u1: DensityField, K: int = 32,
                        tol: float = 1e-8, max_iter: int = 400) -> MetricResult:
    """Squared transport distance ``W_{m(t,.)}(u0, u1)^2``.

    Returns ``+inf`` (with ``path=None``) when either field leaves the value
    space ``[0, S(t)]``.  Identical fields short-circuit to zero.
    """
    if u0.grid != u1.grid:
        raise ValueError("fields live on different grids")
    grid = u0.grid
    if not _check_value_space(mspec, t, u0.values, u1.values, tol=tol):
        return MetricResult(INF, None, converged=True)
    if np.sum(np.abs(u0.values - u1.values)) * grid.dx <= 1e-14:
        R = np.repeat(u0.values[None], K + 1, axis=0)
        return MetricResult(0.0, TransportPath(grid, R, np.zeros((K, grid.cells + 1))))
    if math.isfinite(mspec.S(t)) and 1.0 / grid.length >= mspec.S(t):
        # only the constant density S fits; distinct fields are unreachable
        return MetricResult(INF, None)
    prog = BarrierProgram(grid, mspec, t, u0.values, K, end=u1.values)
    x, st = prog.solve(initial_point(prog), tol=tol, max_iter=max_iter)
    if not st["converged"]:
        log.warning("transport solve hit the iteration cap (%d)", st["iterations"])
    path = prog.path(x)
    return MetricResult(prog.action_sum(x), path, st["iterations"], path.continuity_residual(),
                        st["gap"], st["converged"], st["trace"])


# --------------------------------------------------------------------------
# quantile oracle for the linear-mobility case


def _cdf(u: DensityField):
    c = np.concatenate([[0.0], np.cumsum(u.values) * u.grid.dx])
    total = c[-1]
    if not total > 0:
        raise ValueError("zero-mass field has no quantile function")
    return c / total, u.values / total


def w2_squared_1d(u0: DensityField, u1: DensityField) -> float:
    """Exact ``W2^2`` between two piecewise-constant densities.

    Both quantile functions are piecewise linear in the mass variable, so the
    integral of their squared difference is summed in closed form over the
    merged breakpoints.
    """
    if u0.grid != u1.grid:
        raise ValueError("fields live on different grids")
    xf = u0.grid.faces
    c0, d0 = _cdf(u0)
    c1, d1 = _cdf(u1)
    theta = np.unique(np.concatenate([c0, c1]))
    a, b = theta[:-1], theta[1:]
    keep = b > a
    a, b = a[keep], b[keep]
    mid = 0.5 * (a + b)

    def q(c, d, th, cell):
        return xf[cell] + (th - c[cell]) / (d[cell])

    i0 = np.clip(np.searchsorted(c0, mid) - 1, 0, len(d0) - 1)
    i1 = np.clip(np.searchsorted(c1, mid) - 1, 0, len(d1) - 1)
    da = q(c0, d0, a, i0) - q(c1, d1, a, i1)
    db = q(c0, d0, b, i0) - q(c1, d1, b, i1)
    return float(np.sum((b - a) * (da * da + da * db + db * db) / 3.0))
