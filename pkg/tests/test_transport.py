import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from jkoflow import Grid1D, DensityField, bb_distance_squared, make_field, make_mobility, w2_squared_1d
from jkoflow.transport import BarrierProgram, TransportPath, action, initial_point

from conftest import bump

N, K = 16, 8
G = Grid1D(1.0, N)
LINEAR = make_mobility("linear", C=1.0)
profiles = arrays(float, N, elements=st.floats(0.2, 2.0))


def field(v):
    return make_field(G, v)


def dist(m, a, b, k=K, t=0.0):
    return bb_distance_squared(m, t, a, b, K=k).value


# ---- action


def test_action_conventions():
    m = make_mobility("linear", C=2.0)
    assert action(m, 0.0, 1.0, 2.0) == pytest.approx(2.0)
    assert action(m, 0.0, 0.0, 0.0) == 0.0
    assert action(m, 0.0, 0.0, 1.0) == math.inf


def test_action_logistic_degenerates_at_upper_bound(logistic):
    assert action(logistic, 0.0, 1.0, 0.0) == 0.0
    assert action(logistic, 0.0, 1.0, 0.5) == math.inf


# ---- quantile oracle


def test_quantile_oracle_translation():
    g = Grid1D(1.0, 200)
    x = g.centers
    a = make_field(g, ((x > 0.2) & (x < 0.3)).astype(float))
    b = make_field(g, ((x > 0.5) & (x < 0.6)).astype(float))
    assert w2_squared_1d(a, b) == pytest.approx(0.09, rel=1e-12)


def test_quantile_oracle_uniform_to_half():
    g = Grid1D(1.0, 100)
    x = g.centers
    a = make_field(g, np.ones(100))
    b = make_field(g, (x < 0.5).astype(float))
    # quantiles x and x/2 give int_0^1 (x/2)^2 dx
    assert w2_squared_1d(a, b) == pytest.approx(1.0 / 12.0, rel=1e-12)


# ---- distance


def test_identical_fields_have_zero_distance():
    a = bump(G, 0.4, 0.3, floor=0.1)
    r = bb_distance_squared(LINEAR, 0.0, a, a)
    assert r.value == 0.0 and r.path.rho.shape == (33, N)


def test_outside_value_space_is_infinite(logistic):
    g = Grid1D(2.0, 16)
    a = make_field(g, np.ones(16))
    b = bump(g, 1.0, 0.3)  # peak well above S(0) = 1
    assert bb_distance_squared(logistic, 0.0, a, b).value == math.inf


def test_translated_bump_matches_quantile_oracle():
    g = Grid1D(1.0, 64)
    a, b = bump(g, 0.3, 0.1), bump(g, 0.5, 0.1)
    r = bb_distance_squared(LINEAR, 0.0, a, b, K=16)
    assert r.converged and r.residual <= 1e-9
    assert r.value == pytest.approx(w2_squared_1d(a, b), rel=1e-2)


def test_path_satisfies_continuity_and_endpoints():
    a, b = bump(G, 0.3, 0.2, 0.05), bump(G, 0.7, 0.2, 0.05)
    r = bb_distance_squared(LINEAR, 0.0, a, b, K=K)
    p = r.path
    np.testing.assert_allclose(p.rho[0], a.values)
    np.testing.assert_allclose(p.rho[-1], b.values, atol=1e-10)
    assert p.continuity_residual() <= 1e-9
    np.testing.assert_allclose(p.layer_masses(), 1.0, atol=1e-10)
    assert p.action_value(LINEAR, 0.0) == pytest.approx(r.value, rel=1e-8)


def test_barrier_start_is_interior(logistic):
    g = Grid1D(2.0, 16)
    a = make_field(g, 0.5 + 0.2 * np.cos(np.pi * g.centers / 2))
    b = make_field(g, 0.5 - 0.2 * np.cos(np.pi * g.centers / 2))
    prog = BarrierProgram(g, logistic, 0.0, a.values, K, end=b.values)
    assert prog.inside(initial_point(prog))


@given(profiles, profiles)
def test_symmetry(u, v):
    a, b = field(u), field(v)
    assert dist(LINEAR, a, b) == pytest.approx(dist(LINEAR, b, a), rel=1e-6, abs=1e-12)


@given(profiles, profiles, profiles)
def test_triangle_inequality(u, v, w):
    a, b, c = field(u), field(v), field(w)
    d = lambda x, y: math.sqrt(dist(LINEAR, x, y))
    assert d(a, c) <= d(a, b) + d(b, c) + 1e-6


@given(profiles, profiles, st.floats(1.0, 3.0))
def test_monotone_in_mobility(u, v, extra):
    # larger mobility, smaller distance; S only enlarges the logistic mobility
    a, b = field(u / u.max()), field(v / v.max())
    small = make_mobility("logistic", S0=3.0, growth=0.0)
    large = make_mobility("logistic", S0=3.0 + extra, growth=0.0)
    assert dist(large, a, b) <= dist(small, a, b) * (1 + 1e-6)


@given(profiles, profiles, st.floats(0.5, 4.0))
def test_linear_scaling(u, v, C):
    a, b = field(u), field(v)
    scaled = make_mobility("linear", C=C)
    assert dist(scaled, a, b) == pytest.approx(dist(LINEAR, a, b) / C, rel=1e-6)


@given(profiles, profiles)
def test_w2_bounded_by_mobility_distance(u, v):
    # m(z) = z (S - z) <= S z, so W2^2 <= S W_m^2 with S = C_T
    a, b = field(u), field(v)
    m = make_mobility("logistic", S0=4.0, growth=0.0)
    wm = dist(m, a, b)
    assert dist(LINEAR, a, b) <= 4.0 * wm * (1 + 1e-6)
    assert w2_squared_1d(a, b) <= 4.0 * wm * (1 + 0.05)


def test_refinement_reduces_error():
    errs = []
    for n, k in ((32, 8), (64, 16)):
        g = Grid1D(1.0, n)
        a, b = bump(g, 0.3, 0.1), bump(g, 0.5, 0.1)
        errs.append(abs(dist(LINEAR, a, b, k=k) / w2_squared_1d(a, b) - 1))
    assert errs[1] < errs[0]


def test_mismatched_grids():
    a = field(np.ones(N))
    b = make_field(Grid1D(1.0, 8), np.ones(8))
    with pytest.raises(ValueError):
        bb_distance_squared(LINEAR, 0.0, a, b)
    with pytest.raises(ValueError):
        w2_squared_1d(a, b)


def test_action_example():
    assert action(LINEAR, 0.0, 0.5, 1.0) == pytest.approx(2.0)


def test_logistic_steps_converge_under_refinement():
    m = make_mobility("logistic", S0=1.0, growth=0.0)
    vals = []
    for n, k in ((16, 8), (32, 16), (64, 32)):
        g = Grid1D(2.0, n)
        x = g.centers
        a = make_field(g, np.where(x < 1.0, 0.8, 0.2))
        b = make_field(g, np.where(x < 1.0, 0.3, 0.7))
        vals.append(dist(m, a, b, k=k))
    assert vals[0] > vals[1] > vals[2]
    gaps = [abs(vals[i + 1] - vals[i]) / vals[i + 1] for i in range(2)]
    assert max(gaps) <= 0.02 and gaps[1] < gaps[0]


def test_quantile_oracle_against_fine_quadrature():
    g = Grid1D(1.0, 50)
    a = make_field(g, np.ones(50))
    b = make_field(g, 2.0 - 2.0 * g.centers)
    theta = (np.arange(10**6) + 0.5) / 10**6

    def quantile(u):
        cdf = np.concatenate([[0.0], np.cumsum(u.values) * g.dx])
        return np.interp(theta, cdf / cdf[-1], g.faces)

    brute = float(np.mean((quantile(a) - quantile(b)) ** 2))
    assert w2_squared_1d(a, b) == pytest.approx(brute, abs=1e-6)
    assert w2_squared_1d(a, a) == 0.0
