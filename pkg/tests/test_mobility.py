import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from jkoflow.mobility import (Verdict, approximate_mobility, check_admissibility,
                              custom_mobility, delta_roots, heat_entropy,
                              heat_entropy_density, make_mobility, mobility_from_dict)
from jkoflow import Grid1D, make_field

TS = [0.0, 0.25, 0.5, 0.75, 1.0]


def test_logistic_values_and_support(logistic):
    assert logistic.S(0.5) == pytest.approx(1.5)
    assert logistic.m(0.5, 0.5) == pytest.approx(0.5)
    np.testing.assert_array_equal(logistic.m(0.0, [-0.1, 1.2]), [0.0, 0.0])


def test_power_eps_vanishes_at_zero():
    m = make_mobility("power_eps", eps=0.1, alpha0=0.5, alpha_rate=0.0)
    assert m.m(0.0, 0.0) == 0.0
    assert m.m(0.0, 1.0) == pytest.approx(1.1**0.5 - 0.1**0.5)


def test_alpha_is_clamped():
    m = make_mobility("power", alpha0=0.9, alpha_rate=1.0)
    assert m.m(2.0, 4.0) == pytest.approx(4.0)  # alpha clamped to 1


@pytest.mark.parametrize("kind,params", [("logistic", {"S0": -1.0}), ("linear", {"C": 0.0}),
                                         ("power_eps", {"eps": -0.1}), ("nope", {})])
def test_invalid_parameters(kind, params):
    with pytest.raises(ValueError):
        make_mobility(kind, **params)


def test_dict_round_trip():
    for spec in (make_mobility("logistic", S0=2.0, growth=0.5), make_mobility("linear", C=3.0),
                 make_mobility("power_eps", eps=0.2, alpha0=0.5, alpha_rate=0.1)):
        again = mobility_from_dict(spec.to_dict())
        z = np.linspace(0, 1, 7)
        np.testing.assert_allclose(again.m(0.3, z), spec.m(0.3, z))
    approx = mobility_from_dict({"kind": "power", "alpha0": 0.5, "alpha_rate": 0.0, "delta": 0.1})
    assert approx.kind == "approx" and approx.to_dict()["delta"] == 0.1


@given(st.floats(0, 2), st.floats(0, 1))
def test_logistic_nonnegative_and_concave(t, s):
    spec = make_mobility("logistic", S0=1.0, growth=1.0)
    z = s * spec.S(t)
    assert spec.m(t, z) >= 0
    assert spec.d2m(t, z) <= 0


@given(st.floats(0.05, 0.95))
def test_analytic_derivative_matches_difference(z):
    spec = make_mobility("power_eps", eps=0.1, alpha0=0.6, alpha_rate=0.0)
    h = 1e-6
    fd = (spec.m(0.0, z + h) - spec.m(0.0, z - h)) / (2 * h)
    assert spec.dm(0.0, z) == pytest.approx(fd, rel=1e-6)


# ---- admissibility


def test_logistic_admissible_with_constants(logistic):
    rep = check_admissibility(logistic, TS)
    assert rep.passed("M1", "M2", "M3", "M4")
    np.testing.assert_allclose(rep.M1, [logistic.S(t) for t in TS], rtol=1e-2)
    np.testing.assert_allclose(rep.M2, [logistic.S(t) ** 2 / 2 for t in TS], rtol=1e-2)
    assert rep.C_T == pytest.approx(2.0, rel=1e-6)


def test_power_eps_admissible():
    spec = make_mobility("power_eps", eps=0.1, alpha0=0.5, alpha_rate=0.2)
    assert check_admissibility(spec, TS).passed("M1", "M2", "M3", "M4")


def test_sqrt_mobility_fails_lipschitz_near_zero():
    spec = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    rep = check_admissibility(spec, TS)
    v = rep.verdicts["M3"]
    assert v.status == "fail"
    assert v.witness[1] < 1e-6


def test_sharper_exponent_passes_growth_condition():
    spec = make_mobility("power", alpha0=0.75, alpha_rate=0.0)
    assert check_admissibility(spec, TS).verdicts["M5'"].status == "pass"


def test_custom_smooth_mobility_passes():
    spec = custom_mobility(lambda t, z: z * (1 - z), S=1.0)
    assert check_admissibility(spec, TS).passed("M1", "M2", "M3", "M4")


def test_custom_sqrt_refuted_by_secants():
    spec = custom_mobility(lambda t, z: np.sqrt(np.maximum(z, 0.0)))
    rep = check_admissibility(spec, TS)
    assert rep.verdicts["M3"].status == "fail" and rep.verdicts["M3"].witness[1] < 1e-6
    # concavity near z = 0 cannot be resolved by differences
    assert rep.verdicts["M1"].status == "inconclusive"


def test_failing_verdict_requires_witness():
    with pytest.raises(ValueError):
        Verdict("fail")


def test_admissibility_input_checks(logistic):
    with pytest.raises(ValueError):
        check_admissibility(logistic, [0.5, 0.1])
    with pytest.raises(ValueError):
        check_admissibility(logistic, TS, z_resolution=10)


# ---- approximation


@pytest.mark.parametrize("delta", [0.1, 0.05, 0.025])
def test_approximation_below_and_admissible(delta):
    base = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    md = approximate_mobility(base, delta)
    z = np.linspace(0, 5, 2001)
    assert np.all(md.m(0.0, z) <= base.m(0.0, z) + 1e-15)
    assert md.m(0.0, 0.0) == 0.0
    assert check_admissibility(md, [0.0, 0.5, 1.0]).passed("M1", "M2", "M3")


def test_approximation_error_decreases():
    base = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    z = np.linspace(0, 50, 20001)
    errs = [np.max(np.abs(approximate_mobility(base, d).m(0.0, z) - base.m(0.0, z)))
            for d in (0.1, 0.05, 0.025)]
    assert errs[0] > errs[1] > errs[2]


def test_finite_space_approximation():
    base = make_mobility("logistic", S0=1.0, growth=0.0)
    md = approximate_mobility(base, 0.05, t=0.0)
    z1, z2 = delta_roots(base, 0.05, 0.0)
    assert base.m(0.0, z1) == pytest.approx(0.05) and base.m(0.0, z2) == pytest.approx(0.05)
    z = np.linspace(0, 1, 501)
    assert np.all(md.m(0.0, z) <= base.m(0.0, z) + 1e-12)
    assert md.m(0.0, 0.0) == 0.0 and abs(md.m(0.0, 1.0)) < 1e-12


def test_delta_too_large():
    base = make_mobility("logistic", S0=1.0, growth=0.0)
    with pytest.raises(ValueError):
        approximate_mobility(base, 0.5, t=0.0)
    with pytest.raises(ValueError):
        approximate_mobility(base, -1.0)


# ---- heat entropy


def test_linear_entropy_closed_form():
    spec = make_mobility("linear", C=1.0)
    z = np.array([1e-3, 0.3, 1.0, 2.5])
    num = heat_entropy_density(spec, 0.0, z, use_closed_form=False)
    np.testing.assert_allclose(num, z * np.log(z) - z + 1, atol=1e-8)


def test_logistic_entropy_closed_form():
    spec = make_mobility("logistic", S0=1.0, growth=0.0)
    z = np.array([1e-3, 0.2, 0.5, 0.9, 0.999])
    num = heat_entropy_density(spec, 0.0, z, use_closed_form=False)
    exact = z * np.log(z) + (1 - z) * np.log(1 - z) + np.log(2)
    np.testing.assert_allclose(num, exact, atol=1e-8)


@given(st.floats(0.05, 0.95))
def test_entropy_inverts_mobility(z):
    spec = make_mobility("power_eps", eps=0.1, alpha0=0.5, alpha_rate=0.0)
    h = 1e-3
    vals = heat_entropy_density(spec, 0.0, np.array([z - h, z, z + h]))
    d2 = (vals[0] - 2 * vals[1] + vals[2]) / h**2
    assert spec.m(0.0, z) * d2 == pytest.approx(1.0, abs=1e-4)


def test_entropy_outside_value_space(logistic):
    g = Grid1D(1.0, 8)
    u = make_field(g, np.r_[np.ones(4) * 1.5, np.ones(4) * 0.5])
    assert heat_entropy(logistic, 0.0, u) == math.inf
    with pytest.raises(ValueError):
        heat_entropy_density(logistic, 0.0, 1.5)


def test_sqrt_approximation_closed_form():
    base = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    assert delta_roots(base, 0.1, 0.0) == pytest.approx(0.01, abs=1e-12)
    md = approximate_mobility(base, 0.1)
    z = np.linspace(0.0, 1.0, 101)
    np.testing.assert_allclose(md.m(0.0, z), np.sqrt(z + 0.01) - 0.1, atol=1e-12)
    assert md.m(0.0, 0.0) == 0.0


def test_approximation_error_on_unit_interval():
    base = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    z = np.linspace(0.0, 1.0, 10001)
    errs = [np.max(np.abs(approximate_mobility(base, d).m(0.0, z) - base.m(0.0, z)))
            for d in (0.1, 0.05, 0.025)]
    assert errs == sorted(errs, reverse=True) and errs[-1] < 0.03


def test_mobility_examples(logistic):
    assert logistic.m(0.0, 0.5) == pytest.approx(0.25)
    for t in (0.0, 0.3, 2.0):
        assert logistic.m(t, 0.0) == 0.0 and logistic.m(t, logistic.S(t)) == 0.0


def test_linear_entropy_values():
    spec = make_mobility("linear", C=1.0)
    assert heat_entropy_density(spec, 0.0, 1.0, use_closed_form=False) == pytest.approx(0.0, abs=1e-12)
    assert heat_entropy_density(spec, 0.0, math.e, use_closed_form=False) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("spec", [make_mobility("logistic", S0=1.0, growth=1.0),
                                  make_mobility("logistic", S0=3.0, growth=0.0),
                                  make_mobility("power_eps", eps=0.1, alpha0=0.5, alpha_rate=0.3),
                                  make_mobility("linear", C=2.0)])
@pytest.mark.parametrize("t", [0.0, 0.7])
def test_entropy_normalized_at_reference_state(spec, t):
    zr = spec.z_ref(t)
    assert heat_entropy_density(spec, t, zr) == pytest.approx(0.0, abs=1e-12)
    assert heat_entropy_density(spec, t, zr, use_closed_form=False) == pytest.approx(0.0, abs=1e-12)


def test_logistic_entropy_vanishes_at_half():
    spec = make_mobility("logistic", S0=1.0, growth=0.0)
    assert heat_entropy_density(spec, 0.0, 0.5) == pytest.approx(0.0, abs=1e-15)


def test_linear_admissibility_constants():
    rep = check_admissibility(make_mobility("linear", C=2.5), TS)
    assert rep.passed()
    np.testing.assert_allclose(rep.M1, 2.5)
    np.testing.assert_allclose(rep.M2, 0.0)
    assert rep.C_T == pytest.approx(2.5)


def test_sqrt_mobility_boundary_decay():
    # dm/dz * sqrt(z) = 1/2 for m = sqrt(z), so the decay to 0 at z = 0 fails
    spec = make_mobility("power", alpha0=0.5, alpha_rate=0.0)
    v = check_admissibility(spec, TS).verdicts["M5'"]
    assert v.status == "fail" and v.witness[1] < 1e-6
