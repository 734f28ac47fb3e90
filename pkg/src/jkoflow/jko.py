"""Minimizing-movement scheme with a time-frozen transport cost.

Step ``n`` minimizes

    W_{m(n tau, .)}(u^{n-1}, u)^2 / (2 tau) + E(u)

jointly over the transport path and its free endpoint ``u``.  The mobility
is evaluated at the new time ``n tau`` for the whole step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from .grid import DensityField, mass, second_moment
from .mobility import EntropyQuadratureError, heat_entropy
from .transport import BarrierProgram, SolverError, initial_point

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class JkoConfig:
    tau: float
    T: float
    K: int = 16
    tol: float = 1e-8
    max_iter: int = 400
    record_paths: bool = False
    record_entropy: bool = True
    blend: float = 0.05

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.tau > self.T * (1 + 1e-12):
            raise ValueError("tau must not exceed T")
        if int(self.K) != self.K or self.K < 2:
            raise ValueError("K must be an integer >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")

    @property
    def steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-9))


@dataclass
class StepMetrics:
    n: int
    t: float
    W2n_sq: float
    energy: float
    entropy: float
    mass: float
    moment: float
    iters: int
    residual: float
    gap: float
    converged: bool

    def as_dict(self) -> dict:
        return asdict(self)


class InfeasibleStartError(ValueError):
    pass


class SchemeError(RuntimeError):
    """A step failed; ``partial`` holds the iterates accepted before it."""

    def __init__(self, step: int, cause: Exception, partial=None):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause
        self.partial = partial


def _entropy(mspec, t, u) -> float:
    try:
        return heat_entropy(mspec, t, u)
    except (EntropyQuadratureError, ValueError):
        return math.nan


def jko_step(u_prev: DensityField, t_n: float, tau: float, espec, mspec, cfg: JkoConfig,
             n: int = 1):
    """One step; returns ``(u_n, StepMetrics, path)``.

    ``path`` is ``None`` unless ``cfg.record_paths`` is set.  Non-convergence
    within ``cfg.max_iter`` Newton iterations is flagged in the metrics, and
    the last iterate is returned.
    """
    grid = u_prev.grid
    S = mspec.S(t_n)
    if np.max(u_prev.values) > S + cfg.tol:
        raise InfeasibleStartError(
            f"previous iterate reaches {np.max(u_prev.values):.17g} > S({t_n}) = {S}")
    if math.isfinite(S) and 1.0 / grid.length >= S:
        raise InfeasibleStartError("value space too small for a unit-mass density")
    start = np.minimum(u_prev.values, S) if math.isfinite(S) else u_prev.values
    prog = BarrierProgram(grid, mspec, t_n, start, cfg.K, energy=espec,
                          weight=1.0 / (2.0 * tau))
    x, st = prog.solve(initial_point(prog, cfg.blend), tol=cfg.tol * 0.1,
                       max_iter=cfg.max_iter)
    path = prog.path(x)
    u = DensityField(grid, path.rho[-1])
    w2 = prog.action_sum(x)
    residual = path.continuity_residual()
    metrics = StepMetrics(
        n=n, t=float(t_n), W2n_sq=w2, energy=espec.value(u),
        entropy=_entropy(mspec, t_n, u) if cfg.record_entropy else math.nan,
        mass=mass(u), moment=second_moment(u), iters=st["iterations"],
        residual=residual, gap=st["gap"], converged=bool(st["converged"]))
    if not metrics.converged:
        log.warning("step %d did not converge in %d iterations", n, st["iterations"])
    return u, metrics, (path if cfg.record_paths else None)


@dataclass
class DiscreteSolution:
    """Iterates ``u^0..u^N`` at times ``n tau`` with per-step metrics.

    ``metrics[0]`` describes the initial datum (zero distance, no iterations).
    """

    tau: float
    fields: list
    metrics: list
    paths: list = field(default_factory=list)
    energy_kind: str = ""
    mobility_kind: str = ""

    @property
    def times(self) -> np.ndarray:
        return self.tau * np.arange(len(self.fields))

    @property
    def grid(self):
        return self.fields[0].grid

    @property
    def steps(self) -> int:
        return len(self.fields) - 1

    def values(self) -> np.ndarray:
        return np.array([u.values for u in self.fields])

    def at(self, t: float) -> DensityField:
        """Piecewise-constant interpolation ``u(t) = u^{ceil(t / tau)}``."""
        n = int(math.ceil(t / self.tau - 1e-9))
        return self.fields[min(max(n, 0), self.steps)]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(m, name) for m in self.metrics], dtype=float)

    @property
    def all_converged(self) -> bool:
        return all(m.converged for m in self.metrics)


def run_scheme(u0: DensityField, espec, mspec, cfg: JkoConfig, progress=None) -> DiscreteSolution:
    """Iterate :func:`jko_step` for ``n = 1..ceil(T / tau)``."""
    S0 = mspec.S(0.0)
    if np.max(u0.values) > S0 + cfg.tol:
        raise InfeasibleStartError(f"initial datum exceeds S(0) = {S0}")
    m0 = StepMetrics(0, 0.0, 0.0, espec.value(u0),
                     _entropy(mspec, 0.0, u0) if cfg.record_entropy else math.nan,
                     mass(u0), second_moment(u0), 0, 0.0, 0.0, True)
    sol = DiscreteSolution(cfg.tau, [u0], [m0], energy_kind=espec.kind,
                           mobility_kind=mspec.kind)
    u = u0
    for n in range(1, cfg.steps + 1):
        t_n = n * cfg.tau
        try:
            u, met, path = jko_step(u, t_n, cfg.tau, espec, mspec, cfg, n=n)
        except (SolverError, InfeasibleStartError, FloatingPointError) as exc:
            raise SchemeError(n, exc, sol) from exc
        sol.fields.append(u)
        sol.metrics.append(met)
        if path is not None:
            sol.paths.append(path)
        if progress is not None:
            progress(n, met)
    return sol
