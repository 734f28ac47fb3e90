"""Checks of the discrete estimates satisfied by minimizing-movement solutions.

All numbers are recomputed from the stored iterates, the energy and the
mobility; nothing is read back from solver internals except the per-step
transport cost ``W2n_sq``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import DensityField, grad_faces, gradient_norm_sq, hessian_norm_sq, l2_norm_sq, \
    laplacian_neumann, second_moment
from .mobility import EntropyQuadratureError, heat_entropy
from .transport import w2_squared_1d

PASS, FAIL = "pass", "fail"


def _verdict(ok: bool) -> str:
    return PASS if ok else FAIL


# --------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunctionPair:
    """Spatial test function ``eta`` and temporal test function ``psi``.

    ``eta`` kinds: ``bump`` (smooth, compactly supported in the interior) and
    ``cosine`` (mode ``k``, zero normal derivative at both ends).  ``psi`` is
    a smooth bump supported in ``(lo T, hi T)``; ``sine2`` (``sin(pi t/T)**2``)
    is kept for experiments but lacks compact support in ``(0, T)``.
    """

    __test__ = False  # keep pytest from collecting this class

    eta_kind: str = "cosine"
    k: int = 1
    center: float = 0.5  # relative to the domain length
    radius: float = 0.3
    psi_kind: str = "bump"
    T: float = 1.0
    lo: float = 0.1
    hi: float = 0.9
    scale: float = 1.0  # multiplies eta

    def __post_init__(self):
        if self.eta_kind not in ("cosine", "bump") or self.psi_kind not in ("bump", "sine2"):
            raise ValueError(f"unknown test function ({self.eta_kind}, {self.psi_kind})")
        if not 0 < self.lo < self.hi < 1:
            raise ValueError("psi support must lie inside (0, T)")

    def eta(self, x, L):
        """Values and first two derivatives at ``x``."""
        x = np.asarray(x, dtype=float)
        if self.eta_kind == "cosine":
            w = self.k * np.pi / L
            return (self.scale * np.cos(w * x), -self.scale * w * np.sin(w * x),
                    -self.scale * w * w * np.cos(w * x))
        if self.eta_kind == "bump":
            c, r = self.center * L, self.radius * L
            s = (x - c) / r
            inside = np.abs(s) < 1
            q = np.where(inside, 1.0 - s * s, 1.0)
            e = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
            # d/ds exp(1 - 1/q) = e * (-2 s / q^2)
            d1s = e * (-2.0 * s / q**2)
            d2s = e * ((2.0 * s / q**2) ** 2 - 2.0 / q**2 - 8.0 * s * s / q**3)
            return (self.scale * e, self.scale * np.where(inside, d1s, 0.0) / r,
                    self.scale * np.where(inside, d2s, 0.0) / r**2)
        raise ValueError(f"unknown eta kind {self.eta_kind!r}")

    def psi(self, t):
        """Values and derivative."""
        t = np.asarray(t, dtype=float)
        T = self.T
        if self.psi_kind == "sine2":
            inside = (t >= 0) & (t <= T)
            v = np.where(inside, np.sin(np.pi * t / T) ** 2, 0.0)
            d = np.where(inside, np.pi / T * np.sin(2 * np.pi * t / T), 0.0)
            return v, d
        if self.psi_kind == "bump":
            a, b = self.lo * T, self.hi * T
            s = (2 * t - a - b) / (b - a)
            inside = np.abs(s) < 1
            q = np.where(inside, 1.0 - s * s, 1.0)
            e = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
            d = np.where(inside, e * (-2.0 * s / q**2) * 2.0 / (b - a), 0.0)
            return e, d
        raise ValueError(f"unknown psi kind {self.psi_kind!r}")


def builtin_test_pairs(T: float) -> list:
    """The four catalog pairs used by the rate study."""
    return [
        TestFunctionPair("cosine", k=1, psi_kind="bump", T=T),
        TestFunctionPair("cosine", k=2, psi_kind="bump", T=T),
        TestFunctionPair("bump", center=0.5, radius=0.35, psi_kind="bump", T=T),
        TestFunctionPair("cosine", k=1, psi_kind="bump", T=T, lo=0.25, hi=0.75),
    ]


# --------------------------------------------------------------------------
# classical estimates


@dataclass
class DiagnosticsReport:
    sections: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.sections[key]

    def __setitem__(self, key, value):
        self.sections[key] = value

    @property
    def passed(self) -> bool:
        return all(s.get("verdict", PASS) == PASS for s in self.sections.values())

    def verdicts(self) -> dict:
        return {k: s.get("verdict") for k, s in self.sections.items()}

    def to_dict(self) -> dict:
        return _jsonable(self.sections)

    def table(self) -> str:
        rows = [f"{'check':<28} {'verdict':<8} detail"]
        for k, s in self.sections.items():
            d = {kk: vv for kk, vv in s.items() if kk != "verdict" and not isinstance(vv, list)}
            rows.append(f"{k:<28} {s.get('verdict', ''):<8} " +
                        ", ".join(f"{kk}={_fmt(vv)}" for kk, vv in d.items()))
        return "\n".join(rows)


def _fmt(v):
    return f"{v:.6g}" if isinstance(v, float) else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def _energies(sol, espec):
    return np.array([espec.value(u) for u in sol.fields])


def holder_constant(sol) -> float:
    """``max W2(u(t), u(s)) / sqrt(max(tau, |t - s|))`` over all time pairs.

    For step indices ``n > k`` the piecewise-constant interpolant realizes
    ``|t - s|`` down to ``(n - k - 1) tau``, which gives the largest ratio.
    """
    tau = sol.tau
    F = sol.fields
    best = 0.0
    for n in range(1, len(F)):
        for k in range(n):
            d = math.sqrt(max(w2_squared_1d(F[n], F[k]), 0.0))
            best = max(best, d / math.sqrt(max(1, n - k - 1) * tau))
    return best


def check_classical_estimates(sol, espec, tol: float = 1e-8) -> dict:
    """Energy monotonicity, total square distance and the Hölder constant."""
    E = _energies(sol, espec)
    drops = E[:-1] - E[1:]
    bad = np.flatnonzero(drops < -tol)
    W2 = sol.column("W2n_sq")[1:]
    rhs = 2.0 * sol.tau * (E[0] - float(np.min(E)))
    slack = rhs - float(np.sum(W2))
    return {
        "verdict": _verdict(bad.size == 0 and slack >= -tol),
        "monotone": bad.size == 0,
        "monotonicity_margin": float(np.min(drops)) if drops.size else 0.0,
        "first_increase_step": int(bad[0] + 1) if bad.size else None,
        "distance_sum": float(np.sum(W2)),
        "distance_bound": rhs,
        "distance_slack": slack,
        "holder_constant": holder_constant(sol),
    }


def check_hard_constraints(sol, mspec, tol: float = 1e-8) -> dict:
    """Mass, positivity and the value-space bound at every step."""
    dx = sol.grid.dx
    masses = np.array([dx * np.sum(u.values) for u in sol.fields])
    drift = float(np.max(np.abs(masses - 1.0)))
    over = max(float(np.max(u.values) - mspec.S(n * sol.tau)) for n, u in enumerate(sol.fields))
    under = float(min(np.min(u.values) for u in sol.fields))
    conv = all(m.converged for m in sol.metrics)
    resid = float(max(m.residual for m in sol.metrics))
    ok = drift <= 1e-10 and over <= tol and under >= 0.0 and conv and resid <= 1e-9
    return {"verdict": _verdict(ok), "mass_drift": drift, "max_bound_violation": max(over, 0.0),
            "min_value": under, "all_converged": conv, "max_residual": resid}


# --------------------------------------------------------------------------
# entropy dissipation and a priori bounds


def _regularity_norm(u: DensityField, espec) -> float:
    return gradient_norm_sq(u) if espec.variant == "E1" else hessian_norm_sq(u)


def entropy_dissipation_check(sol, mspec, espec) -> dict:
    """Per-step constants in ``tau |u^n|^2 <= C (H(u^{n-1}) - H(u^n) + tau)``.

    ``|.|`` is the gradient norm for local energies and the Hessian norm for
    gradient energies; ``H`` is the heat entropy frozen at time ``n tau``.
    """
    tau = sol.tau
    C, skipped, acc = [], 0, 0.0
    for n in range(1, len(sol.fields)):
        t = n * tau
        lhs = tau * _regularity_norm(sol.fields[n], espec)
        acc += lhs
        try:
            dH = heat_entropy(mspec, t, sol.fields[n - 1]) - heat_entropy(mspec, t, sol.fields[n])
        except (EntropyQuadratureError, ValueError):
            skipped += 1
            continue
        denom = dH + tau
        C.append(lhs / denom if denom > 0 else math.inf)
    Cmax = max(C) if C else 0.0
    return {"verdict": _verdict(math.isfinite(Cmax)), "C_max": Cmax, "C_per_step": C,
            "skipped_steps": skipped, "accumulated": acc}


def apriori_bounds(sol, espec) -> dict:
    """``sup |u^n|`` (L2, or H1 for gradient energies), ``sup mom`` and the
    accumulated regularity ``tau sum |u^n|^2``."""
    F = sol.fields
    if espec.variant == "E1":
        norms = [math.sqrt(l2_norm_sq(u)) for u in F]
    else:
        norms = [math.sqrt(l2_norm_sq(u) + gradient_norm_sq(u)) for u in F]
    mom = [second_moment(u) for u in F]
    acc = sol.tau * sum(_regularity_norm(u, espec) for u in F[1:])
    vals = norms + mom + [acc]
    return {"verdict": _verdict(all(math.isfinite(v) for v in vals)),
            "sup_norm": max(norms), "sup_moment": max(mom), "accumulated": acc}


# --------------------------------------------------------------------------
# discrete weak formulation


def _psi_weights(sol, tf):
    n = np.arange(1, len(sol.fields))
    psi_n, _ = tf.psi(n * sol.tau)
    psi_next, _ = tf.psi((n + 1) * sol.tau)
    return n, psi_n, psi_next


def weak_residual(sol, espec, mspec, tf: TestFunctionPair) -> float:
    """Absolute residual of the discrete weak formulation.

    Step ``n`` occupies ``((n-1) tau, n tau]`` with the step-``n`` field and
    ``psi(n tau)``.  Spatial integrals are midpoint sums; gradients are the
    Neumann-closed face differences and the mobility and ``f''`` are taken
    at face means.  Gradient energies use :func:`flux_term_e2`.

    The initial-datum term ``-psi(tau) <u^0, eta>`` is included.  It vanishes
    whenever ``tau`` lies below the support of ``psi`` and otherwise restores
    the summation-by-parts identity with the step-to-step differences.
    """
    grid = sol.grid
    dx, x = grid.dx, grid.centers
    eta, _, _ = tf.eta(x, grid.length)
    deta = grad_faces(eta, dx)
    dphi = grad_faces(espec.phi(grid), dx)
    psi1, _ = tf.psi(sol.tau)
    total = -float(psi1) * dx * np.dot(sol.fields[0].values, eta)
    for n, pn, pnext in zip(*_psi_weights(sol, tf)):
        if pn == 0.0 and pnext == 0.0:
            continue
        u = sol.fields[n].values
        time_term = ((pn - pnext) / sol.tau) * dx * np.dot(u, eta)
        if espec.variant == "E1":
            flux = flux_term_e1(u, n * sol.tau, espec, mspec, deta, dphi, dx)
        else:
            flux = flux_term_e2(u, n * sol.tau, espec, mspec, eta, grid)
        total += sol.tau * (time_term + pn * flux)
    return abs(total)


def flux_term_e1(u, t, espec, mspec, deta, dphi, dx):
    g = grad_faces(u, dx)
    ub = np.zeros(u.size + 1)
    ub[1:-1] = 0.5 * (u[:-1] + u[1:])
    mf = np.zeros_like(ub)
    mf[1:-1] = mspec.m(t, ub[1:-1])
    fpp = espec.hess(ub)
    return float(dx * np.sum(mf * (fpp * g + dphi) * deta))


def _e2_pieces(u, t, espec, mspec, eta, dx):
    """Discrete ingredients of the fourth-order flux term.

    Faces carry ``q = m(t, mean u) D eta``, ``u_x = D u`` and a face Laplacian
    (mean of the two cells).  Cells carry ``div q``, ``u_xx`` (the Neumann
    Laplacian) and ``u_x`` as the mean of the two faces.
    """
    g = grad_faces(u, dx)
    lap = laplacian_neumann(u, dx)
    Q = np.zeros(u.size + 1)
    Q[1:-1] = mspec.m(t, 0.5 * (u[:-1] + u[1:])) * np.diff(eta) / dx
    divQ = np.diff(Q) / dx
    ux_c = 0.5 * (g[:-1] + g[1:])
    lap_f = np.zeros_like(g)
    lap_f[1:-1] = 0.5 * (lap[:-1] + lap[1:])
    ub = np.concatenate([[u[0]], 0.5 * (u[:-1] + u[1:]), [u[-1]]])
    return g, lap, Q, divQ, ux_c, lap_f, ub


def flux_term_e2(u, t, espec, mspec, eta, grid):
    """Trace form ``tr{(div q, q) H (u_xx, u_x)^T}`` plus ``q phi_x`` in d = 1.

    The ``div q`` column is evaluated at cells and the ``q`` column at faces,
    each against the Hessian of ``f`` at the same location.
    """
    dx = grid.dx
    g, lap, Q, divQ, ux_c, lap_f, ub = _e2_pieces(u, t, espec, mspec, eta, dx)
    Hc = np.stack([np.stack(h, -1) for h in _hess_matrix(espec, ux_c, u)], axis=1)
    Hf = np.stack([np.stack(h, -1) for h in _hess_matrix(espec, g, ub)], axis=1)
    row_c = np.stack([divQ, np.zeros_like(divQ)], -1)[:, None, :]
    col_c = np.stack([lap, ux_c], -1)[:, :, None]
    row_f = np.stack([np.zeros_like(Q), Q], -1)[:, None, :]
    col_f = np.stack([lap_f, g], -1)[:, :, None]
    cell = np.trace(row_c @ Hc @ col_c, axis1=1, axis2=2)
    face = np.trace(row_f @ Hf @ col_f, axis1=1, axis2=2)
    return float(dx * (np.sum(cell) + np.sum(face)) + _phi_term(Q, espec, grid))


def flux_term_e2_expanded(u, t, espec, mspec, eta, grid):
    """Same quantity written out: ``q_x (f_pp u_xx + f_pz u_x) + q (f_pz u_xx + f_zz u_x)``."""
    dx = grid.dx
    g, lap, Q, divQ, ux_c, lap_f, ub = _e2_pieces(u, t, espec, mspec, eta, dx)
    fpp_c, fpz_c, _ = espec.hess(ux_c, u)
    _, fpz_f, fzz_f = espec.hess(g, ub)
    cell = divQ * (fpp_c * lap + fpz_c * ux_c)
    face = Q * (fpz_f * lap_f + fzz_f * g)
    return float(dx * (np.sum(cell) + np.sum(face)) + _phi_term(Q, espec, grid))


def _hess_matrix(espec, p, z):
    fpp, fpz, fzz = (np.broadcast_to(np.asarray(a, dtype=float), np.shape(p))
                     for a in espec.hess(p, z))
    return [(fpp, fpz), (fpz, fzz)]


def _phi_term(Q, espec, grid):
    dphi = grad_faces(espec.phi(grid), grid.dx)
    return float(grid.dx * np.sum(Q * dphi))


def residual_study(solutions, espec, mspec, pairs=None) -> dict:
    """Weak residuals over a family of runs with halving ``tau``.

    Reports per-pair residuals, successive ratios and the least-squares decay
    exponent of ``log residual`` against ``log tau``.
    """
    sols = sorted(solutions, key=lambda s: -s.tau)
    T = sols[0].tau * sols[0].steps
    pairs = pairs or builtin_test_pairs(T)
    taus = [s.tau for s in sols]
    out = []
    for tf in pairs:
        res = [weak_residual(s, espec, mspec, tf) for s in sols]
        ratios = [res[i + 1] / res[i] if res[i] > 0 else math.nan for i in range(len(res) - 1)]
        exp = _decay_exponent(taus, res)
        out.append({"eta": tf.eta_kind, "k": tf.k, "psi": tf.psi_kind, "residuals": res,
                    "ratios": ratios, "exponent": exp,
                    "in_band": all(0.5 <= r <= 0.85 for r in ratios)})
    n_ok = sum(p["in_band"] for p in out)
    exps = [p["exponent"] for p in out if math.isfinite(p["exponent"])]
    return {"verdict": _verdict(n_ok >= 3), "taus": taus, "pairs": out, "pairs_in_band": n_ok,
            "median_exponent": float(np.median(exps)) if exps else math.nan}


def _decay_exponent(taus, res):
    t, r = np.asarray(taus, float), np.asarray(res, float)
    ok = r > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(t[ok]), np.log(r[ok]), 1)[0])


# --------------------------------------------------------------------------
# refinement family


def _stable(values, band):
    v = np.asarray(values, float)
    if v.size == 0 or not np.all(np.isfinite(v)):
        return False
    ref = v[0]
    return bool(np.all(np.abs(v / ref - 1.0) <= band)) if ref != 0 else bool(np.all(v == 0))


def refinement_report(solutions, espec, mspec, pairs=None, residuals: bool = True) -> DiagnosticsReport:
    """Family-level verdicts for runs that differ only in ``tau``.

    Stability bands are measured against the coarsest run: ``+-20%`` for the
    Hölder constant and ``+-50%`` for the a priori bounds and accumulated
    regularity.  Per-step entropy constants must not grow by more than a
    factor ``1.5`` per halving.
    """
    sols = sorted(solutions, key=lambda s: -s.tau)
    rep = DiagnosticsReport()
    classical = [check_classical_estimates(s, espec) for s in sols]
    hard = [check_hard_constraints(s, mspec) for s in sols]
    ent = [entropy_dissipation_check(s, mspec, espec) for s in sols]
    apr = [apriori_bounds(s, espec) for s in sols]
    taus = [s.tau for s in sols]
    rep["classical"] = {"verdict": _verdict(all(c["verdict"] == PASS for c in classical)),
                        "taus": taus, "runs": classical}
    rep["hard_constraints"] = {"verdict": _verdict(all(h["verdict"] == PASS for h in hard)),
                               "runs": hard}
    C = [c["holder_constant"] for c in classical]
    rep["holder"] = {"verdict": _verdict(_stable(C, 0.2)), "C_hold": C,
                     "max_rel_change": float(np.max(np.abs(np.asarray(C) / C[0] - 1)))}
    Cmax = [e["C_max"] for e in ent]
    ratios = [Cmax[i + 1] / Cmax[i] for i in range(len(Cmax) - 1) if Cmax[i] > 0]
    acc = [e["accumulated"] for e in ent]
    rep["entropy_dissipation"] = {
        "verdict": _verdict(all(math.isfinite(c) for c in Cmax) and all(r <= 1.5 for r in ratios)
                            and _stable(acc, 0.5)),
        "C_max": Cmax, "C_ratios": ratios, "accumulated": acc,
        "skipped_steps": [e["skipped_steps"] for e in ent]}
    keys = ("sup_norm", "sup_moment", "accumulated")
    rep["apriori"] = {"verdict": _verdict(all(_stable([a[k] for a in apr], 0.5) for k in keys)),
                      **{k: [a[k] for a in apr] for k in keys}}
    if residuals and len(sols) >= 2:
        rep["weak_residual"] = residual_study(sols, espec, mspec, pairs)
    return rep


def run_report(sol, espec, mspec) -> DiagnosticsReport:
    """Single-run checks."""
    rep = DiagnosticsReport()
    rep["classical"] = check_classical_estimates(sol, espec)
    rep["hard_constraints"] = check_hard_constraints(sol, mspec)
    ent = entropy_dissipation_check(sol, mspec, espec)
    rep["entropy_dissipation"] = ent
    rep["apriori"] = apriori_bounds(sol, espec)
    return rep
