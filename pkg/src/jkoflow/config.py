"""Experiment configuration: JSON schema validation, defaults, spec builders."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass
from importlib import resources

import jsonschema
import numpy as np

from .energy import energy_from_dict
from .grid import DensityField, Grid1D, make_field
from .jko import JkoConfig
from .mobility import mobility_from_dict

DEFAULTS = {"K": 16, "tol": 1e-8, "max_iter": 400}
DISTANCE_K = 32


class ConfigError(ValueError):
    """Invalid configuration; ``path`` is a JSON pointer to the offending entry."""

    def __init__(self, message: str, path: str = ""):
        super().__init__(f"{path or '/'}: {message}")
        self.path = path
        self.message = message


def load_schema() -> dict:
    text = resources.files("jkoflow").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def _validate_schema(raw: dict):
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: (list(map(str, e.path)), e.message))
    if errors:
        first = errors[0]
        detail = "; ".join(f"{_pointer(e.path) or '/'}: {e.message}" for e in errors[1:4])
        msg = first.message + (f" (also {detail})" if detail else "")
        raise ConfigError(msg, _pointer(first.path))


def initial_profile(grid: Grid1D, d: dict) -> np.ndarray:
    """Unnormalized samples of a tagged initial datum at cell centers.

    ``bump`` is the compactly supported parabola ``(1 - ((x - c) / w)^2)_+``,
    ``two-bump`` a sum of two of them, ``step`` the indicator of ``[a, b]``.
    Positions are absolute; ``floor`` is added everywhere.
    """
    x, L = grid.centers, grid.length
    kind = d["kind"]
    floor = d.get("floor", 0.0)

    def bump(c, w):
        return np.maximum(1.0 - ((x - c) / w) ** 2, 0.0)

    if kind == "uniform":
        v = np.ones_like(x)
    elif kind == "bump":
        v = bump(d.get("center", 0.5 * L), d.get("width", 0.25 * L))
    elif kind == "two-bump":
        c1, c2 = d.get("centers", [0.3 * L, 0.7 * L])
        w = d.get("width", 0.15 * L)
        v = bump(c1, w) + bump(c2, w)
    elif kind == "step":
        a, b = d.get("a", 0.25 * L), d.get("b", 0.75 * L)
        v = ((x >= a) & (x <= b)).astype(float)
    else:  # pragma: no cover - the schema enumerates kinds
        raise ConfigError(f"unknown initial datum {kind!r}", "/initial/kind")
    v = v + floor
    if not np.any(v > 0):
        raise ConfigError("initial datum vanishes on the grid", "/initial")
    return v


def build_datum(grid: Grid1D, d: dict) -> DensityField:
    return make_field(grid, initial_profile(grid, d), normalize=d.get("normalize", True))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description.  Equality compares the filled dict."""

    data: dict

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data

    def __hash__(self):
        return hash(json.dumps(self.data, sort_keys=True))

    @property
    def job(self) -> str:
        return self.data["job"]

    @property
    def output(self):
        return self.data.get("output")

    @property
    def taus(self) -> list:
        sch = self.data["scheme"]
        return list(sch["taus"]) if "taus" in sch else [sch["tau"]]

    def grid(self) -> Grid1D:
        g = self.data["grid"]
        return Grid1D(g["L"], g["N"])

    def mobility(self):
        return mobility_from_dict(self.data["mobility"])

    def energy(self):
        return energy_from_dict(self.data["energy"])

    def initial(self) -> DensityField:
        return build_datum(self.grid(), self.data["initial"])

    def target(self) -> DensityField:
        return build_datum(self.grid(), self.data["distance"]["target"])

    def scheme(self, tau: float | None = None) -> JkoConfig:
        s = self.data["scheme"]
        return JkoConfig(tau=tau if tau is not None else self.taus[0], T=s["T"], K=s["K"],
                         tol=s["tol"], max_iter=s["max_iter"])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def _fill_defaults(raw: dict) -> dict:
    d = copy.deepcopy(raw)
    d.setdefault("job", "run")
    for k, v in DEFAULTS.items():
        d["scheme"].setdefault(k, v)
    d["energy"].setdefault("phi", {"tag": "zero"})
    d["initial"].setdefault("normalize", True)
    if "distance" in d:
        d["distance"].setdefault("K", DISTANCE_K)
        d["distance"].setdefault("t", 0.0)
        d["distance"]["target"].setdefault("normalize", True)
    return d


def _check_semantics(d: dict):
    sch = d["scheme"]
    if ("tau" in sch) == ("taus" in sch):
        raise ConfigError("give exactly one of 'tau' and 'taus'", "/scheme")
    job = d["job"]
    if job == "convergence-study" and "taus" not in sch:
        raise ConfigError("a convergence study needs a 'taus' list", "/scheme")
    if job == "distance" and "distance" not in d:
        raise ConfigError("the distance job needs a 'distance' block", "")
    for i, tau in enumerate(sch.get("taus", [sch.get("tau")])):
        where = f"/scheme/taus/{i}" if "taus" in sch else "/scheme/tau"
        if tau > sch["T"] * (1 + 1e-12):
            raise ConfigError(f"step {tau} exceeds the horizon T = {sch['T']}", where)
    mob = d["mobility"]
    allowed = {"logistic": {"S0", "growth"}, "power_eps": {"eps", "alpha0", "alpha_rate"},
               "power": {"alpha0", "alpha_rate"}, "linear": {"C"}}[mob["kind"]]
    for key in mob:
        if key not in allowed | {"kind", "delta"}:
            raise ConfigError(f"parameter '{key}' does not apply to {mob['kind']} mobility",
                              f"/mobility/{key}")
    en = d["energy"]
    allowed = {"quadratic_E1": {"c"}, "quadratic_EQ": {"c_p", "c_z"}, "dirichlet": {"c_p"}}
    for key in en:
        if key not in allowed[en["kind"]] | {"kind", "phi"}:
            raise ConfigError(f"parameter '{key}' does not apply to {en['kind']}",
                              f"/energy/{key}")


def _check_value_space(cfg: ExperimentConfig):
    """The initial datum must take values in ``[0, S(0)]``."""
    mspec = cfg.mobility()
    S0 = mspec.S(0.0)
    u0 = cfg.initial()
    peak = float(np.max(u0.values))
    if math.isfinite(S0) and peak > S0 + cfg.data["scheme"]["tol"]:
        raise ConfigError(
            f"initial datum reaches {peak:.6g} > S(0) = {S0:.6g}; the existence theory "
            f"requires u0(x) in [0, S(0)]", "/initial")
    if "distance" in cfg.data:
        t = cfg.data["distance"]["t"]
        if float(np.max(cfg.target().values)) > mspec.S(t) + cfg.data["scheme"]["tol"]:
            raise ConfigError(f"distance target exceeds S({t}) = {mspec.S(t):.6g}",
                              "/distance/target")


def validate(raw: dict) -> ExperimentConfig:
    """Validate a raw dict, fill defaults and check the value-space hypothesis."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    _validate_schema(raw)
    d = _fill_defaults(raw)
    _check_semantics(d)
    cfg = ExperimentConfig(d)
    try:
        cfg.grid()
        cfg.energy()
        cfg.mobility()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _check_value_space(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"not valid JSON: {exc}") from exc
    return validate(raw)
