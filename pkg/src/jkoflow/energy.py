"""Convex free energies on a 1-D grid.

Two classes are supported.  Local energies ``int f(u) + phi u`` (tag ``E1``)
and gradient energies ``int f(u_x, u) + phi u`` (tag ``E2``).  Gradients live
on faces.  Each cell integrates ``f`` with its two adjacent face gradients and
gives them equal weight, so that

    E(u) = dx * sum_i [ (f(g_{i-1/2}, u_i) + f(g_{i+1/2}, u_i)) / 2 + phi_i u_i ]

with zero gradient on the two boundary faces.  For ``f = p**2/2`` this is the
plain discrete Dirichlet energy with no oscillating null mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .grid import DensityField, Grid1D, grad_faces

PHI_TAGS = ("zero", "linear", "quadratic-well", "cosine")


@dataclass(frozen=True)
class Potential:
    """External potential from a fixed catalog, sampled at cell centers.

    ``linear``          ``a * x``
    ``quadratic-well``  ``a * (x - c)**2``
    ``cosine``          ``a * cos(k pi x / L)``
    """

    tag: str = "zero"
    a: float = 1.0
    c: float = 0.5
    k: int = 1

    def __post_init__(self):
        if self.tag not in PHI_TAGS:
            raise ValueError(f"unknown potential tag {self.tag!r}; expected one of {PHI_TAGS}")

    def sample(self, grid: Grid1D) -> np.ndarray:
        x = grid.centers
        if self.tag == "zero":
            return np.zeros_like(x)
        if self.tag == "linear":
            return self.a * x
        if self.tag == "quadratic-well":
            return self.a * (x - self.c) ** 2
        return self.a * np.cos(self.k * np.pi * x / grid.length)

    def infimum(self, grid: Grid1D) -> float:
        return float(np.min(self.sample(grid)))

    def to_dict(self) -> dict:
        d = {"tag": self.tag}
        if self.tag != "zero":
            d["a"] = self.a
        if self.tag == "quadratic-well":
            d["c"] = self.c
        if self.tag == "cosine":
            d["k"] = self.k
        return d

    @classmethod
    def from_dict(cls, d) -> "Potential":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class EnergySpec:
    """Evaluator bundle for one free energy.

    For ``E1`` the density callables take ``z``; for ``E2`` they take
    ``(p, z)`` and ``hess`` returns ``(f_pp, f_pz, f_zz)``.
    """

    variant: str
    kind: str
    f: Callable
    fp: Optional[Callable]  # E2 only
    fz: Callable
    hess: Callable
    gamma0: float
    gamma1: float
    potential: Potential = field(default_factory=Potential)
    params: dict = field(default_factory=dict)
    bounded_only: bool = False
    quadratic: Optional[tuple] = None  # (c_p, c_z) when f = c_p p^2/2 + c_z z^2/2

    def phi(self, grid: Grid1D) -> np.ndarray:
        return self.potential.sample(grid)

    # -- evaluation -------------------------------------------------------

    def value(self, u) -> float:
        v, grid = _unpack(u)
        phi = self.phi(grid)
        if self.variant == "E1":
            dens = self.f(v)
        else:
            g = grad_faces(v, grid.dx)
            dens = 0.5 * (self.f(g[:-1], v) + self.f(g[1:], v))
        return float(grid.dx * np.sum(dens + phi * v))

    def first_variation(self, u) -> np.ndarray:
        v, grid = _unpack(u)
        phi = self.phi(grid)
        if self.variant == "E1":
            return self.fz(v) + phi
        dx = grid.dx
        g = grad_faces(v, dx)
        P = np.zeros_like(g)
        P[1:-1] = 0.5 * (self.fp(g[1:-1], v[:-1]) + self.fp(g[1:-1], v[1:]))
        dz = 0.5 * (self.fz(g[:-1], v) + self.fz(g[1:], v))
        return -np.diff(P) / dx + dz + phi

    def hessian(self, u) -> sp.csr_matrix:
        """Sparse Hessian of ``value`` (includes the ``dx`` factor)."""
        v, grid = _unpack(u)
        dx, n = grid.dx, grid.cells
        if self.variant == "E1":
            return sp.diags(dx * self.hess(v), format="csr")
        g = grad_faces(v, dx)
        rows, cols, vals = [], [], []
        faces = np.arange(1, n)
        left, right = faces - 1, faces
        gi = g[1:-1]
        for cell in (left, right):
            fpp, fpz, fzz = self.hess(gi, v[cell])
            # term (dx/2) f(g, u_cell); g = (u_R - u_L)/dx
            w = 0.5 * dx
            cL, cR = -1.0 / dx, 1.0 / dx
            idx = (left, right, cell)
            # J^T H J with J rows: g <- (cL at L, cR at R), z <- (1 at cell)
            entries = {
                (0, 0): fpp * cL * cL, (0, 1): fpp * cL * cR, (1, 1): fpp * cR * cR,
                (0, 2): fpz * cL, (1, 2): fpz * cR, (2, 2): fzz,
            }
            for (a, b), val in entries.items():
                rows.append(idx[a]); cols.append(idx[b]); vals.append(w * val)
                if a != b:
                    rows.append(idx[b]); cols.append(idx[a]); vals.append(w * val)
        # the two boundary half-terms f(0, u) at cells 0 and n-1
        for cell in (0, n - 1):
            _, _, fzz = self.hess(np.zeros(1), v[cell:cell + 1])
            rows.append(np.array([cell])); cols.append(np.array([cell]))
            vals.append(0.5 * dx * fzz)
        r = np.concatenate([np.atleast_1d(x) for x in rows])
        c = np.concatenate([np.atleast_1d(x) for x in cols])
        d = np.concatenate([np.broadcast_to(np.atleast_1d(x), np.atleast_1d(y).shape)
                            for x, y in zip(vals, rows)])
        return sp.csr_matrix((d, (r, c)), shape=(n, n))

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom energies are not serializable")
        return {"kind": self.kind, **self.params, "phi": self.potential.to_dict()}


def _unpack(u):
    if isinstance(u, DensityField):
        return u.values, u.grid
    raise TypeError("expected a DensityField")


def eval_energy(espec: EnergySpec, u: DensityField) -> float:
    return espec.value(u)


def first_variation(espec: EnergySpec, u: DensityField) -> np.ndarray:
    return espec.first_variation(u)


# --------------------------------------------------------------------------
# construction


def _positive(name, x):
    if not (isinstance(x, (int, float)) and x > 0 and math.isfinite(x)):
        raise ValueError(f"{name} must be positive and finite, got {x!r}")
    return float(x)


def _potential(phi) -> Potential:
    if phi is None:
        return Potential()
    if isinstance(phi, Potential):
        return phi
    if isinstance(phi, str):
        return Potential(phi)
    return Potential.from_dict(phi)


def make_energy(kind: str, phi=None, **params) -> EnergySpec:
    """Builtin energies.

    ``quadratic_E1``  ``f(z) = c z^2 / 2``                       (param ``c``)
    ``quadratic_EQ``  ``f(p, z) = c_p p^2 / 2 + c_z z^2 / 2``     (``c_p``, ``c_z``)
    ``dirichlet``     ``f(p, z) = c_p p^2 / 2``, convex in ``p`` only, bounded domains
    """
    pot = _potential(phi)
    if kind == "quadratic_E1":
        c = _positive("c", params.get("c", 1.0))
        return EnergySpec(
            "E1", kind,
            f=lambda z: 0.5 * c * z * z, fp=None, fz=lambda z: c * z,
            hess=lambda z: np.full_like(np.asarray(z, dtype=float), c),
            gamma0=c, gamma1=c, potential=pot, params={"c": c}, quadratic=(0.0, c),
        )
    if kind in ("quadratic_EQ", "dirichlet"):
        cp = _positive("c_p", params.get("c_p", 1.0))
        cz = 0.0 if kind == "dirichlet" else _positive("c_z", params.get("c_z", 1.0))
        extra = {"c_p": cp} if kind == "dirichlet" else {"c_p": cp, "c_z": cz}
        return EnergySpec(
            "E2", kind,
            f=lambda p, z: 0.5 * cp * p * p + 0.5 * cz * z * z,
            fp=lambda p, z: cp * p + 0.0 * z,
            fz=lambda p, z: cz * z + 0.0 * p,
            hess=lambda p, z: (np.full(np.broadcast(p, z).shape, cp),
                               np.zeros(np.broadcast(p, z).shape),
                               np.full(np.broadcast(p, z).shape, cz)),
            gamma0=cp if kind == "dirichlet" else min(cp, cz), gamma1=max(cp, cz),
            potential=pot, params=extra, bounded_only=(kind == "dirichlet"),
            quadratic=(cp, cz),
        )
    raise ValueError(f"unknown energy kind {kind!r}")


def energy_from_dict(d: dict) -> EnergySpec:
    d = dict(d)
    return make_energy(d.pop("kind"), phi=d.pop("phi", None), **d)


def custom_energy_e1(f, df, d2f, gamma0, gamma1, phi=None, probe=np.linspace(0, 10, 201),
                     tol=1e-8) -> EnergySpec:
    """Local energy from an evaluator bundle; the bounds are probed on ``probe``."""
    if df is None or d2f is None:
        raise ValueError("f, f' and f'' evaluators are all required")
    g0, g1 = _positive("gamma0", gamma0), _positive("gamma1", gamma1)
    if g1 < g0:
        raise ValueError("gamma1 must not be below gamma0")
    z = np.asarray(probe, dtype=float)
    curv = np.asarray(d2f(z), dtype=float)
    if np.any(curv < g0 - tol) or np.any(curv > g1 + tol):
        i = int(np.argmax((curv < g0 - tol) | (curv > g1 + tol)))
        raise ValueError(f"f''({z[i]:.6g}) = {curv[i]:.6g} outside [{g0}, {g1}]")
    if abs(float(f(0.0))) > tol or abs(float(df(0.0))) > tol:
        raise ValueError("a local energy density needs f(0) = 0 and f'(0) = 0")
    return EnergySpec("E1", "custom", f, None, df, d2f, g0, g1, _potential(phi))


def custom_energy_e2(f, fp, fz, hess, gamma0, gamma1, phi=None, p_only=False,
                     probe_p=np.linspace(-10, 10, 41), probe_z=np.linspace(0, 10, 41),
                     tol=1e-8) -> EnergySpec:
    """Gradient energy from an evaluator bundle.

    ``hess(p, z)`` returns ``(f_pp, f_pz, f_zz)``.  With ``p_only`` only the
    ``p``-block is required to be bounded below by ``gamma0``.
    """
    if fp is None or fz is None or hess is None:
        raise ValueError("f, f_p, f_z and the Hessian evaluator are all required")
    g0, g1 = _positive("gamma0", gamma0), _positive("gamma1", gamma1)
    P, Z = np.meshgrid(probe_p, probe_z)
    lo, hi = probe_convexity_e2(hess, P.ravel(), Z.ravel(), p_only)
    if lo < g0 - tol or hi > g1 + tol:
        raise ValueError(f"probed curvature range [{lo:.6g}, {hi:.6g}] exceeds [{g0}, {g1}]")
    return EnergySpec("E2", "custom", f, fp, fz, hess, g0, g1, _potential(phi),
                      bounded_only=p_only)


def probe_convexity_e2(hess, p, z, p_only=False):
    """Extreme eigenvalues of the ``(p, z)`` Hessian over samples."""
    fpp, fpz, fzz = (np.broadcast_to(np.asarray(a, dtype=float), np.shape(p))
                     for a in hess(p, z))
    if p_only:
        return float(np.min(fpp)), float(np.max(fpp))
    tr, det = fpp + fzz, fpp * fzz - fpz * fpz
    disc = np.sqrt(np.maximum(tr * tr / 4 - det, 0.0))
    return float(np.min(tr / 2 - disc)), float(np.max(tr / 2 + disc))
