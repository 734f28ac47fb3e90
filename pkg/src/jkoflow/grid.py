"""Cell-centered 1-D grids, nonnegative density fields and discrete calculus.

Cells carry densities, faces carry fluxes and gradients.  Boundary faces are
closed (zero flux / zero normal derivative), which makes every divergence
telescope to zero and keeps mass exactly conserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Grid1D:
    """Uniform grid on ``[0, length]`` with ``cells`` control volumes."""

    length: float
    cells: int

    def __post_init__(self):
        if not self.length > 0:
            raise ValueError(f"grid length must be positive, got {self.length}")
        if int(self.cells) != self.cells or self.cells < 4:
            raise ValueError(f"grid needs an integer number of cells >= 4, got {self.cells}")
        object.__setattr__(self, "cells", int(self.cells))

    @property
    def dx(self) -> float:
        return self.length / self.cells

    @property
    def centers(self) -> np.ndarray:
        return (np.arange(self.cells) + 0.5) * self.dx

    @property
    def faces(self) -> np.ndarray:
        return np.arange(self.cells + 1) * self.dx

    def __eq__(self, other):
        if not isinstance(other, Grid1D):
            return NotImplemented
        return self.cells == other.cells and self.length == other.length

    def __hash__(self):
        return hash((self.length, self.cells))


@dataclass(frozen=True, eq=False)
class DensityField:
    """Nonnegative cell averages on a :class:`Grid1D`.

    The value array is stored read-only; fields are never mutated in place.
    """

    grid: Grid1D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.cells,):
            raise ValueError(f"expected {self.grid.cells} values, got shape {v.shape}")
        bad = np.flatnonzero(~(v >= 0))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"density must be nonnegative, sample {i} is {v[i]!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.grid.cells

    def with_values(self, values) -> "DensityField":
        return DensityField(self.grid, values)


def make_field(grid: Grid1D, samples, normalize: bool = True) -> DensityField:
    """Build a density field from cell samples, optionally rescaled to unit mass.

    Raises
    ------
    ValueError
        If a sample is negative (the message names the index) or if
        ``normalize`` is set and the samples carry no mass.
    """
    v = np.asarray(samples, dtype=float)
    if v.shape != (grid.cells,):
        raise ValueError(f"expected {grid.cells} samples, got shape {v.shape}")
    bad = np.flatnonzero(~(v >= 0))
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"negative sample at index {i}: {v[i]!r}")
    if normalize:
        total = grid.dx * v.sum()
        if not total > 0:
            raise ValueError("cannot normalize a field with zero total mass")
        v = v / total
    return DensityField(grid, v)


def mass(u: DensityField) -> float:
    return float(u.grid.dx * np.sum(u.values))


def second_moment(u: DensityField) -> float:
    x = u.grid.centers
    return float(u.grid.dx * np.sum(x * x * u.values))


def first_moment(u: DensityField) -> float:
    return float(u.grid.dx * np.sum(u.grid.centers * u.values))


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, DensityField) else np.asarray(u, dtype=float)


def grad_faces(u, dx: float | None = None) -> np.ndarray:
    """Face gradients of cell values, zero on the two boundary faces.

    Accepts a :class:`DensityField` or a raw cell array (then ``dx`` is
    required).  Works along the last axis, so stacked layers are fine.
    """
    if isinstance(u, DensityField):
        dx = u.grid.dx
    elif dx is None:
        raise ValueError("dx required for raw arrays")
    v = _values(u)
    g = np.zeros(v.shape[:-1] + (v.shape[-1] + 1,))
    g[..., 1:-1] = np.diff(v, axis=-1) / dx
    return g


def div_cells(w, dx: float) -> np.ndarray:
    """Cell divergence of face values ``w`` (length ``N + 1`` on the last axis)."""
    w = np.asarray(w, dtype=float)
    return np.diff(w, axis=-1) / dx


def laplacian_neumann(u, dx: float | None = None) -> np.ndarray:
    if isinstance(u, DensityField):
        dx = u.grid.dx
    return div_cells(grad_faces(u, dx), dx)


def laplacian_matrix(grid: Grid1D):
    """Sparse matrix of :func:`laplacian_neumann` (rows sum to zero)."""
    import scipy.sparse as sp

    n, h2 = grid.cells, grid.dx**2
    main = np.full(n, -2.0)
    main[0] = main[-1] = -1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h2


def integrate(grid: Grid1D, values) -> float:
    """Midpoint rule over cells."""
    return float(grid.dx * np.sum(values))


def l2_norm_sq(u) -> float:
    return integrate(u.grid, u.values**2)


def gradient_norm_sq(u: DensityField) -> float:
    """Discrete ``||grad u||^2`` summed over faces."""
    g = grad_faces(u)
    return float(u.grid.dx * np.sum(g * g))


def hessian_norm_sq(u: DensityField) -> float:
    """Discrete ``||Laplacian u||^2`` (equals ``||D^2 u||^2`` in one dimension)."""
    lap = laplacian_neumann(u)
    return float(u.grid.dx * np.sum(lap * lap))
