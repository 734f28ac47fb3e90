import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from jkoflow import Grid1D, JkoConfig, make_energy, make_field, make_mobility, run_scheme
from jkoflow.diagnostics import (DiagnosticsReport, TestFunctionPair, apriori_bounds,
                                 builtin_test_pairs, check_classical_estimates,
                                 check_hard_constraints, entropy_dissipation_check,
                                 flux_term_e1, flux_term_e2, flux_term_e2_expanded,
                                 holder_constant, refinement_report, run_report, weak_residual)
from jkoflow.energy import custom_energy_e2
from jkoflow.grid import grad_faces

N = 24
G = Grid1D(2.0, N)
LOGISTIC = make_mobility("logistic", S0=1.0, growth=1.0)
cells = arrays(float, N, elements=st.floats(0.05, 0.95))


def _coupled_e2():
    return custom_energy_e2(
        f=lambda p, z: 0.5 * p * p + 0.2 * p * z + 0.5 * z * z,
        fp=lambda p, z: p + 0.2 * z, fz=lambda p, z: 0.2 * p + z,
        hess=lambda p, z: tuple(np.full(np.broadcast(p, z).shape, c) for c in (1.0, 0.2, 1.0)),
        gamma0=0.8, gamma1=1.2, phi={"tag": "cosine", "a": 0.5, "k": 1})


@pytest.fixture(scope="module")
def small_run():
    u0 = make_field(G, 0.5 + 0.3 * np.cos(np.pi * G.centers / 2))
    e = make_energy("quadratic_E1")
    return run_scheme(u0, e, LOGISTIC, JkoConfig(tau=0.01, T=0.05)), e


# ---- test functions


@pytest.mark.parametrize("tf", builtin_test_pairs(1.0) + [TestFunctionPair("bump", psi_kind="sine2")])
def test_test_function_derivatives(tf):
    x = np.linspace(0.05, 1.95, 97)
    v, d1, d2 = tf.eta(x, 2.0)
    h = 1e-5
    np.testing.assert_allclose(d1, (tf.eta(x + h, 2.0)[0] - tf.eta(x - h, 2.0)[0]) / (2 * h),
                               atol=1e-5)
    np.testing.assert_allclose(d2, (tf.eta(x + h, 2.0)[1] - tf.eta(x - h, 2.0)[1]) / (2 * h),
                               atol=1e-4)
    t = np.linspace(0.01, 0.99, 50)
    pv, pd = tf.psi(t)
    np.testing.assert_allclose(pd, (tf.psi(t + h)[0] - tf.psi(t - h)[0]) / (2 * h), atol=1e-4)


def test_catalog_psi_is_compactly_supported():
    for tf in builtin_test_pairs(0.1):
        v, _ = tf.psi(np.array([0.0, 0.1 * tf.lo, 0.1 * tf.hi, 0.1]))
        np.testing.assert_array_equal(v, 0.0)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunctionPair("gauss")
    with pytest.raises(ValueError):
        TestFunctionPair(lo=0.6, hi=0.4)


# ---- flux terms


@given(cells, st.floats(0.0, 0.5))
def test_e2_codings_agree(u, t):
    e = _coupled_e2()
    tf = TestFunctionPair("cosine", k=2)
    eta = tf.eta(G.centers, G.length)[0]
    a = flux_term_e2(u, t, e, LOGISTIC, eta, G)
    b = flux_term_e2_expanded(u, t, e, LOGISTIC, eta, G)
    assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@given(cells)
def test_quadratic_e2_flux_is_mobility_weighted_variation(u):
    # for f = c_p p^2/2 + c_z z^2/2 both forms reduce to dx sum q . D(dE/du)
    e = make_energy("quadratic_EQ", c_p=0.7, c_z=1.3, phi={"tag": "linear", "a": 0.4})
    eta = np.cos(np.pi * G.centers / 2)
    mu = e.first_variation(make_field(G, u, normalize=False))
    q = np.zeros(N + 1)
    q[1:-1] = LOGISTIC.m(0.1, 0.5 * (u[:-1] + u[1:])) * np.diff(eta) / G.dx
    direct = G.dx * np.sum(q * grad_faces(mu, G.dx))
    assert flux_term_e2(u, 0.1, e, LOGISTIC, eta, G) == pytest.approx(direct, rel=1e-10, abs=1e-10)


@given(cells)
def test_e1_flux_is_mobility_weighted_variation(u):
    e = make_energy("quadratic_E1", c=1.7, phi={"tag": "cosine", "a": 0.3, "k": 2})
    eta = np.cos(np.pi * G.centers / 2)
    deta = grad_faces(eta, G.dx)
    dphi = grad_faces(e.phi(G), G.dx)
    mu = e.first_variation(make_field(G, u, normalize=False))
    mf = np.r_[0.0, LOGISTIC.m(0.1, 0.5 * (u[:-1] + u[1:])), 0.0]
    direct = G.dx * np.sum(mf * grad_faces(mu, G.dx) * deta)
    assert flux_term_e1(u, 0.1, e, LOGISTIC, deta, dphi, G.dx) == pytest.approx(direct, rel=1e-10)


# ---- weak residual


@given(st.floats(-5.0, 5.0).filter(lambda s: abs(s) > 1e-3))
def test_weak_residual_is_homogeneous_in_eta(small_run, scale):
    sol, e = small_run
    base = TestFunctionPair("cosine", k=1, T=0.05)
    scaled = TestFunctionPair("cosine", k=1, T=0.05, scale=scale)
    r0 = weak_residual(sol, e, LOGISTIC, base)
    assert weak_residual(sol, e, LOGISTIC, scaled) == pytest.approx(abs(scale) * r0, rel=1e-12)


def test_weak_residual_of_stationary_run_vanishes():
    u0 = make_field(G, np.ones(N))
    e = make_energy("quadratic_E1")
    sol = run_scheme(u0, e, LOGISTIC, JkoConfig(tau=0.01, T=0.04))
    for tf in builtin_test_pairs(0.04):
        assert weak_residual(sol, e, LOGISTIC, tf) < 1e-12


# ---- estimates


def test_classical_estimates_pass(small_run):
    sol, e = small_run
    rep = check_classical_estimates(sol, e)
    assert rep["verdict"] == "pass" and rep["monotone"]
    assert rep["distance_slack"] >= 0
    assert rep["holder_constant"] == pytest.approx(holder_constant(sol))


def test_hard_constraints_detect_violation(small_run):
    sol, e = small_run
    assert check_hard_constraints(sol, LOGISTIC)["verdict"] == "pass"
    tight = make_mobility("logistic", S0=0.6, growth=0.0)
    rep = check_hard_constraints(sol, tight)
    assert rep["verdict"] == "fail" and rep["max_bound_violation"] > 0


def test_holder_constant_of_static_run_is_zero():
    u0 = make_field(G, np.ones(N))
    sol = run_scheme(u0, make_energy("quadratic_E1"), LOGISTIC, JkoConfig(tau=0.01, T=0.03))
    assert holder_constant(sol) < 1e-10


def test_entropy_and_apriori(small_run):
    sol, e = small_run
    ent = entropy_dissipation_check(sol, LOGISTIC, e)
    assert ent["verdict"] == "pass" and len(ent["C_per_step"]) == sol.steps
    assert all(c >= 0 for c in ent["C_per_step"])
    apr = apriori_bounds(sol, e)
    assert apr["verdict"] == "pass" and math.isfinite(apr["accumulated"])


def test_report_serialization(small_run):
    sol, e = small_run
    rep = run_report(sol, e, LOGISTIC)
    assert rep.passed
    d = rep.to_dict()
    assert set(d) == {"classical", "hard_constraints", "entropy_dissipation", "apriori"}
    assert "classical" in rep.table()


def test_report_flags_failures():
    rep = DiagnosticsReport({"a": {"verdict": "pass"}, "b": {"verdict": "fail", "x": math.inf}})
    assert not rep.passed
    assert rep.to_dict()["b"]["x"] == "inf"


def test_refinement_report_keys():
    u0 = make_field(G, 0.5 + 0.3 * np.cos(np.pi * G.centers / 2))
    e = make_energy("quadratic_E1")
    sols = [run_scheme(u0, e, LOGISTIC, JkoConfig(tau=tau, T=0.02)) for tau in (0.01, 0.005)]
    rep = refinement_report(sols, e, LOGISTIC)
    assert {"classical", "hard_constraints", "holder", "entropy_dissipation", "apriori",
            "weak_residual"} <= set(rep.sections)
    assert rep["weak_residual"]["taus"] == [0.01, 0.005]


def _hand_built(fields, tau=0.01, w2=None):
    from jkoflow.jko import DiscreteSolution, StepMetrics

    mets = [StepMetrics(n, n * tau, 0.0 if w2 is None else w2[n], 0.0, 0.0, 1.0, 0.0, 1,
                        0.0, 0.0, True) for n in range(len(fields))]
    return DiscreteSolution(tau, fields, mets)


def test_energy_increase_is_reported_with_index():
    g = Grid1D(1.0, 8)
    flat = make_field(g, np.ones(8))
    peaked = make_field(g, np.r_[np.ones(4) * 1.5, np.ones(4) * 0.5])
    sol = _hand_built([peaked, flat, peaked, flat])
    rep = check_classical_estimates(sol, make_energy("quadratic_E1"))
    assert rep["verdict"] == "fail" and not rep["monotone"]
    assert rep["first_increase_step"] == 2


def test_zero_test_function_gives_zero(small_run):
    sol, e = small_run
    zero = TestFunctionPair("cosine", k=1, T=0.05, scale=0.0)
    assert weak_residual(sol, e, LOGISTIC, zero) == 0.0


def test_porous_medium_entropy_decays():
    # with m = z the heat entropy is z log z - z + 1; its per-step change is >= -O(tau)
    from jkoflow import heat_entropy

    g = Grid1D(1.0, 32)
    u0 = make_field(g, np.maximum(1 - ((g.centers - 0.5) / 0.25) ** 2, 0.0) + 0.1)
    lin = make_mobility("linear")
    tau = 2e-3
    sol = run_scheme(u0, make_energy("quadratic_E1"), lin, JkoConfig(tau=tau, T=0.01))
    H = [heat_entropy(lin, 0.0, u) for u in sol.fields]
    assert all(H[n - 1] - H[n] >= -tau for n in range(1, len(H)))
    assert H[-1] < H[0]


def test_stationary_entropy_check():
    u0 = make_field(G, np.ones(N))
    sol = run_scheme(u0, make_energy("quadratic_E1"), LOGISTIC, JkoConfig(tau=0.01, T=0.03))
    ent = entropy_dissipation_check(sol, LOGISTIC, make_energy("quadratic_E1"))
    assert ent["verdict"] == "pass" and ent["accumulated"] < 1e-20


def test_uniform_apriori_bounds():
    g = Grid1D(1.0, 16)
    u = make_field(g, np.ones(16))
    rep = apriori_bounds(_hand_built([u, u, u]), make_energy("quadratic_E1"))
    assert rep["sup_norm"] == pytest.approx(1.0) and rep["accumulated"] == 0.0


def test_diverging_iterate_fails_bounds():
    from jkoflow.grid import DensityField

    g = Grid1D(1.0, 16)
    u = make_field(g, np.ones(16))
    blown = DensityField(g, np.r_[np.inf, np.ones(15)])
    rep = apriori_bounds(_hand_built([u, u, blown]), make_energy("quadratic_E1"))
    assert rep["verdict"] == "fail"
