"""Command-line experiment runner.

Usage::

    jkoflow run --config exp.json --out results/
    jkoflow convergence-study --config family.json --threads 3

Every job writes per-run CSV files plus ``diagnostics.json`` and
``summary.json`` into the output directory.  Floats carry 17 significant
digits so that reruns are byte-identical and configs round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, ExperimentConfig, load_config, validate
from .diagnostics import DiagnosticsReport, check_hard_constraints, refinement_report, run_report
from .jko import InfeasibleStartError, SchemeError, run_scheme
from .mobility import check_admissibility
from .reference import ReferenceStabilityError, compare_trajectories, reference_solve
from .transport import w2_squared_1d, bb_distance_squared

log = logging.getLogger("jkoflow")

JOBS = ("run", "convergence-study", "compare-reference", "distance", "check-admissibility")
METRIC_COLUMNS = ("n", "t", "W2n_sq", "energy", "entropy", "mass", "moment", "iters")


# --------------------------------------------------------------------------
# serialization


def fmt_float(x) -> str:
    return "%.17g" % x


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return fmt_float(float(v))
    return str(v)


def write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


def dumps(obj, indent: int = 0) -> str:
    """JSON text with ``%.17g`` floats; non-finite floats become strings."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_string(str(k))}: {dumps(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return fmt_float(x) if math.isfinite(x) else _string(str(x))
    return _string(str(obj))


def _string(s: str) -> str:
    import json

    return json.dumps(s)


def write_json(path: Path, obj):
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def trajectory_rows(times, fields):
    for t, u in zip(times, fields):
        for x, v in zip(u.grid.centers, u.values):
            yield (float(t), float(x), float(v))


def metric_rows(sol):
    for m in sol.metrics:
        yield tuple(getattr(m, c) for c in METRIC_COLUMNS)


# --------------------------------------------------------------------------
# jobs


class JobResult:
    def __init__(self):
        self.ok = True
        self.results = {}
        self.verdicts = {}
        self.diagnostics = None
        self.failure = None

    def fail(self, where: str, exc: Exception, step=None):
        self.ok = False
        self.failure = {"where": where, "error": type(exc).__name__, "message": str(exc),
                        "step": step}


def _suffix(i, n):
    return "" if n == 1 else f"_tau{i}"


def _solve(cfg: ExperimentConfig, tau: float):
    """Run the scheme; returns ``(solution, error)`` with a partial solution on failure."""
    espec, mspec = cfg.energy(), cfg.mobility()
    try:
        sol = run_scheme(cfg.initial(), espec, mspec, cfg.scheme(tau),
                         progress=lambda n, m: log.debug("tau=%g step %d iters %d", tau, n,
                                                         m.iters))
        return sol, None
    except SchemeError as exc:
        return exc.partial, exc
    except InfeasibleStartError as exc:
        return None, exc


def _solve_all(cfg, threads: int):
    taus = cfg.taus
    if threads > 1 and len(taus) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(lambda t: _solve(cfg, t), taus))
    return [_solve(cfg, t) for t in taus]


def _write_runs(out: Path, pairs, res: JobResult):
    n = len(pairs)
    for i, (sol, err) in enumerate(pairs):
        sfx = _suffix(i, n)
        if sol is not None:
            write_csv(out / f"trajectory{sfx}.csv", ("t", "x", "u"),
                      trajectory_rows(sol.times, sol.fields))
            write_csv(out / f"metrics{sfx}.csv", METRIC_COLUMNS, metric_rows(sol))
        if err is not None and res.failure is None:
            res.fail("scheme", err, getattr(err, "step", None))
        elif sol is not None and not sol.all_converged and res.failure is None:
            bad = next(m.n for m in sol.metrics if not m.converged)
            res.ok = False
            res.failure = {"where": "scheme", "error": "NonConvergence", "step": bad,
                           "message": f"step {bad} hit the iteration cap (tau={sol.tau})"}


def job_run(cfg, out, threads) -> JobResult:
    res = JobResult()
    espec, mspec = cfg.energy(), cfg.mobility()
    pairs = _solve_all(cfg, threads)
    _write_runs(out, pairs, res)
    reports = []
    for sol, err in pairs:
        if sol is None or sol.steps == 0:
            continue
        rep = run_report(sol, espec, mspec)
        reports.append(rep)
        res.ok &= rep["hard_constraints"]["verdict"] == "pass"
    if len(reports) == 1:
        res.diagnostics = reports[0]
    elif reports:
        res.diagnostics = DiagnosticsReport({f"tau{i}": {"verdict": "pass" if r.passed else "fail",
                                                         **r.to_dict()}
                                             for i, r in enumerate(reports)})
    for i, (sol, _) in enumerate(pairs):
        if sol is not None:
            res.results[f"tau{i}"] = {
                "tau": sol.tau, "steps": sol.steps,
                "W2_sum": float(np.sum(sol.column("W2n_sq"))),
                "energy_final": sol.metrics[-1].energy,
                "max_iters": int(max(m.iters for m in sol.metrics)),
                "all_converged": sol.all_converged}
    if res.diagnostics is not None:
        res.verdicts = res.diagnostics.verdicts()
    return res


def job_convergence(cfg, out, threads) -> JobResult:
    res = JobResult()
    espec, mspec = cfg.energy(), cfg.mobility()
    pairs = _solve_all(cfg, threads)
    _write_runs(out, pairs, res)
    if any(sol is None or err is not None for sol, err in pairs):
        res.ok = False
        return res
    rep = refinement_report([s for s, _ in pairs], espec, mspec)
    res.diagnostics = rep
    res.verdicts = rep.verdicts()
    res.ok = rep["hard_constraints"]["verdict"] == "pass"
    wr = rep["weak_residual"]
    res.results = {"taus": wr["taus"], "weak_residual_exponent": wr["median_exponent"],
                   "pairs_in_band": wr["pairs_in_band"],
                   "exponents": [p["exponent"] for p in wr["pairs"]],
                   "C_hold": rep["holder"]["C_hold"]}
    return res


def job_compare(cfg, out, threads) -> JobResult:
    res = JobResult()
    espec, mspec = cfg.energy(), cfg.mobility()
    pairs = _solve_all(cfg, threads)
    _write_runs(out, pairs, res)
    T = cfg.data["scheme"]["T"]
    ref_dt = cfg.data.get("reference", {}).get("dt")
    times = sorted({float(t) for sol, _ in pairs if sol is not None for t in sol.times[1:]})
    try:
        traj = reference_solve(cfg.initial(), espec, mspec, T, dt=ref_dt, output_times=times)
    except (ReferenceStabilityError, ValueError) as exc:
        res.fail("reference", exc)
        return res
    write_csv(out / "reference_trajectory.csv", ("t", "x", "u"),
              trajectory_rows(traj.times, traj.fields))
    runs = []
    n = len(pairs)
    for i, (sol, err) in enumerate(pairs):
        if sol is None or err is not None:
            continue
        rep = compare_trajectories(sol, traj, times=sol.times[1:])
        write_csv(out / f"errors{_suffix(i, n)}.csv", ("t", "l1", "l2", "linf"),
                  zip(rep.times, rep.l1, rep.l2, rep.linf))
        hard = check_hard_constraints(sol, mspec)
        res.ok &= hard["verdict"] == "pass"
        runs.append({"tau": sol.tau, "rel_l2_time": rep.rel_l2_time, "l2_time": rep.l2_time,
                     "hard_constraints": hard["verdict"]})
    rels = [r["rel_l2_time"] for r in runs]
    res.results = {"runs": runs, "rel_l2_time": rels[0] if len(rels) == 1 else rels,
                   "reference_backend": traj.backend,
                   "reference_steps": int(sum(s[2] for s in traj.step_log)),
                   "reference_mass_drift": traj.mass_drift,
                   "reference_clipped": [list(c) for c in traj.clip_log]}
    res.verdicts = {"hard_constraints": "pass" if res.ok else "fail",
                    "decreasing_under_refinement":
                        "pass" if all(b < a for a, b in zip(rels, rels[1:])) else "fail"}
    res.diagnostics = DiagnosticsReport({"comparison": {"verdict": res.verdicts["hard_constraints"],
                                                        "runs": runs}})
    return res


def job_distance(cfg, out, threads) -> JobResult:
    res = JobResult()
    d = cfg.data["distance"]
    mspec = cfg.mobility()
    u0, u1 = cfg.initial(), cfg.target()
    r = bb_distance_squared(mspec, d["t"], u0, u1, K=d["K"], tol=cfg.data["scheme"]["tol"],
                            max_iter=cfg.data["scheme"]["max_iter"])
    oracle = w2_squared_1d(u0, u1) if mspec.kind == "linear" and not mspec.base else None
    if oracle is not None:
        oracle = oracle / mspec.params["C"]
    write_csv(out / "distance.csv",
              ("value", "iterations", "residual", "gap", "converged", "w2_oracle"),
              [(r.value, r.iterations, r.residual, r.gap, r.converged,
                "" if oracle is None else oracle)])
    write_csv(out / "distance_trace.csv", ("iteration", "mu", "decrement", "step"), r.trace)
    res.ok = bool(r.converged)
    res.results = {"value": r.value, "w2_oracle": oracle, **r.stats}
    res.verdicts = {"converged": "pass" if r.converged else "fail"}
    res.diagnostics = DiagnosticsReport({"distance": {"verdict": res.verdicts["converged"],
                                                      **res.results}})
    return res


def job_admissibility(cfg, out, threads) -> JobResult:
    res = JobResult()
    a = cfg.data.get("admissibility", {})
    T = cfg.data["scheme"]["T"]
    ts = a.get("t_samples", list(np.linspace(0.0, T, 5)))
    rep = check_admissibility(cfg.mobility(), ts, z_resolution=a.get("z_resolution", 128))
    res.results = rep.to_dict()
    res.verdicts = {k: v.status for k, v in rep.verdicts.items()}
    res.diagnostics = DiagnosticsReport({k: {"verdict": v.status, **v.to_dict()}
                                         for k, v in rep.verdicts.items()})
    write_csv(out / "admissibility.csv", ("t", "M1", "M2"), zip(rep.t_samples, rep.M1, rep.M2))
    return res


RUNNERS = {"run": job_run, "convergence-study": job_convergence,
           "compare-reference": job_compare, "distance": job_distance,
           "check-admissibility": job_admissibility}


def execute(cfg: ExperimentConfig, out=None, threads: int = 1, seed=None) -> int:
    """Run the configured job and write its artifacts; returns the exit status."""
    out = Path(out or cfg.output or "out")
    out.mkdir(parents=True, exist_ok=True)
    try:
        res = RUNNERS[cfg.job](cfg, out, max(1, int(threads)))
    except (ValueError, RuntimeError, FloatingPointError) as exc:
        res = JobResult()
        res.fail(cfg.job, exc)
    if res.diagnostics is not None:
        write_json(out / "diagnostics.json", res.diagnostics.to_dict())
    summary = {
        "status": "completed" if res.failure is None else "failed",
        "exit_code": 0 if (res.ok and res.failure is None) else 1,
        "job": cfg.job,
        "config": cfg.to_dict(),
        "verdicts": res.verdicts,
        "results": _plain(res.results),
        "failure": res.failure,
        "metadata": {"version": __version__, "kernel_backend": kernels.BACKEND, "seed": seed},
    }
    write_json(out / "summary.json", summary)
    return summary["exit_code"]


def _plain(obj):
    from .diagnostics import _jsonable

    return _jsonable(obj)


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jkoflow", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"jkoflow {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in JOBS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON experiment file")
        s.add_argument("--out", help="output directory (overrides the config)")
        s.add_argument("--threads", type=int, default=1, help="concurrent runs in a tau sweep")
        s.add_argument("--seed", type=int, help="recorded in the summary only")
        s.add_argument("-v", "--verbose", action="count", default=0)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        if cfg.job != args.command:
            data = cfg.to_dict()
            data["job"] = args.command
            cfg = validate(data)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    code = execute(cfg, out=args.out, threads=args.threads, seed=args.seed)
    out = Path(args.out or cfg.output or "out")
    print(f"{cfg.job}: {'ok' if code == 0 else 'FAILED'} -> {out / 'summary.json'}")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
