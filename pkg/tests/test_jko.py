import math

import numpy as np
import pytest

from jkoflow import Grid1D, JkoConfig, jko_step, make_energy, make_field, make_mobility, run_scheme
from jkoflow.jko import InfeasibleStartError

from conftest import bump

G2 = Grid1D(2.0, 32)
E1 = make_energy("quadratic_E1")
EQ = make_energy("quadratic_EQ", c_p=1.0, c_z=1.0)


def cosine_datum(g):
    x = g.centers
    return make_field(g, 0.5 + 0.3 * np.cos(np.pi * x / g.length))


@pytest.mark.parametrize("kw", [{"tau": 0.0, "T": 1.0}, {"tau": 0.1, "T": -1.0},
                                {"tau": 2.0, "T": 1.0}, {"tau": 0.1, "T": 1.0, "K": 1},
                                {"tau": 0.1, "T": 1.0, "tol": 0.0}])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        JkoConfig(**kw)


def test_config_defaults():
    cfg = JkoConfig(tau=0.01, T=0.1)
    assert cfg.K == 16 and cfg.tol == 1e-8 and cfg.steps == 10


def test_stationary_datum_stays_put(logistic):
    u0 = make_field(G2, np.ones(32))
    sol = run_scheme(u0, EQ, logistic, JkoConfig(tau=0.01, T=0.03))
    assert sol.all_converged
    assert np.max(sol.column("W2n_sq")) < 1e-20
    np.testing.assert_allclose(sol.fields[-1].values, 0.5, atol=1e-10)


def test_single_step_decreases_energy(logistic):
    u0 = cosine_datum(G2)
    cfg = JkoConfig(tau=0.01, T=0.01)
    u1, met, path = jko_step(u0, 0.01, 0.01, E1, logistic, cfg)
    assert path is None
    assert met.converged and met.residual <= 1e-9
    assert abs(met.mass - 1.0) <= 1e-10
    # the minimizer beats staying put
    assert met.W2n_sq / (2 * 0.01) + met.energy <= E1.value(u0) + 1e-12
    assert np.all(u1.values >= 0) and np.max(u1.values) <= logistic.S(0.01) + 1e-8


def test_recorded_path_ends_at_iterate(logistic):
    cfg = JkoConfig(tau=0.01, T=0.01, K=8, record_paths=True)
    u1, met, path = jko_step(cosine_datum(G2), 0.01, 0.01, E1, logistic, cfg)
    np.testing.assert_allclose(path.rho[-1], u1.values)
    assert path.action_value(logistic, 0.01) == pytest.approx(met.W2n_sq, rel=1e-8)


def test_porous_medium_spreads():
    g = Grid1D(1.0, 32)
    u0 = bump(g, 0.5, 0.2)
    sol = run_scheme(u0, E1, make_mobility("linear", C=1.0), JkoConfig(tau=2e-3, T=6e-3))
    E = sol.column("energy")
    assert np.all(np.diff(E) < 0)
    m = sol.column("moment")
    assert m[-1] > m[0]  # mass moves outward from the center
    np.testing.assert_allclose(sol.column("mass"), 1.0, atol=1e-10)


def test_infeasible_initial_datum(logistic):
    g = Grid1D(1.0, 16)
    u0 = bump(g, 0.5, 0.3)
    with pytest.raises(InfeasibleStartError):
        run_scheme(u0, E1, logistic, JkoConfig(tau=0.01, T=0.02))


def test_piecewise_constant_interpolation(logistic):
    sol = run_scheme(cosine_datum(G2), E1, logistic, JkoConfig(tau=0.01, T=0.03))
    assert sol.at(0.0) is sol.fields[0]
    assert sol.at(0.005) is sol.fields[1]
    assert sol.at(0.01) is sol.fields[1]
    assert sol.at(0.0101) is sol.fields[2]
    assert sol.steps == 3 and sol.times[-1] == pytest.approx(0.03)


def test_fourth_order_step_conserves_bounds(logistic):
    sol = run_scheme(cosine_datum(G2), EQ, logistic, JkoConfig(tau=5e-3, T=1e-2))
    assert sol.all_converged
    E = sol.column("energy")
    assert np.all(np.diff(E) <= 1e-8)
    for n, u in enumerate(sol.fields):
        assert 0.0 <= u.values.min() and u.values.max() <= logistic.S(n * 5e-3) + 1e-8
    assert all(math.isfinite(e) for e in sol.column("entropy"))


def test_uniform_minimizer_is_fixed_point():
    g = Grid1D(1.0, 32)
    u0 = make_field(g, np.ones(32))
    cfg = JkoConfig(tau=0.01, T=0.01)
    u1, met, _ = jko_step(u0, 0.01, 0.01, E1, make_mobility("linear"), cfg)
    assert met.W2n_sq <= cfg.tol
    np.testing.assert_allclose(u1.values, 1.0, atol=1e-8)


def test_single_step_tracks_reference():
    from jkoflow import reference_solve

    g = Grid1D(1.0, 64)
    u0 = make_field(g, 1.0 + 0.2 * np.exp(-(g.centers - 0.5) ** 2 / 0.01))
    lin = make_mobility("linear")
    tau = 1e-3
    u1, _, _ = jko_step(u0, tau, tau, E1, lin, JkoConfig(tau=tau, T=tau))
    ref = reference_solve(u0, E1, lin, tau, output_times=[tau])
    assert g.dx * np.sum(np.abs(u1.values - ref.fields[-1].values)) <= 3 * tau
