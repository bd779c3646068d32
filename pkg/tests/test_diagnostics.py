import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrsgd import (NoiseStream, cost_function_c, coupling_contraction_curve, decomposition_audit,
                   fit_rate_exponent, m_gamma, make_problem, run_tail_averaged,
                   stationary_moment_estimate)
from rrsgd.backend import get
from rrsgd.diagnostics import (DecayCurve, RateFit, decomposition_terms, stationary_statistics,
                               stationary_table_csv)

from oracles import ar1_stationary_var

vec = st.lists(st.floats(-10, 10), min_size=2, max_size=2).map(np.array)


def test_m_gamma():
    assert m_gamma(0.1, 1.0) == 28
    assert m_gamma(0.01, 2.0) == math.ceil(2 * math.log(4) / 0.02)
    with pytest.raises(ValueError):
        m_gamma(0.0, 1.0)


def test_cost_function_examples():
    assert cost_function_c([1.0], [1.0], [0.0], 0.25, 1.0, 1.0) == 0.0
    assert cost_function_c([1.0], [0.0], [0.0], 0.25, 1.0, 1.0) == pytest.approx(1 + math.sqrt(2))
    with pytest.raises(ValueError):
        cost_function_c([1.0], [0.0], [0.0], -1.0, 1.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(vec, vec, vec, st.floats(1e-4, 1.0), st.floats(0.01, 10), st.floats(0, 5))
def test_cost_function_properties(a, b, s, gamma, mu, tau):
    ab = cost_function_c(a, b, s, gamma, mu, tau)
    assert ab == cost_function_c(b, a, s, gamma, mu, tau)
    assert ab >= 0
    assert cost_function_c(a, a, s, gamma, mu, tau) == 0
    if tau > 0 and np.linalg.norm(a - b) > 0:
        assert ab > 0


def test_curve_equal_starts_is_zero(logcosh3):
    c = coupling_contraction_curve(logcosh3, 0.05, logcosh3.theta_star, logcosh3.theta_star,
                                   50, 20, 0)
    assert not any(c.values)


def test_curve_zero_noise_halving():
    p = make_problem("quadratic", hessian=1.0)
    c = coupling_contraction_curve(p, 0.5, [1.0], [-1.0], 6, 2, 0)
    # distance and both radii halve, so c drops by 4 per step (tau2 = 0)
    np.testing.assert_allclose(c.values, [2.0 * 2.0 / 4 ** k for k in range(7)])


def test_quadratic_difference_is_deterministic(quad3):
    ks = np.arange(0, 40, 3)
    a, b = quad3.theta_star + [1.0, 0.0, -1.0], quad3.theta_star - [0.5, 0.5, 0.5]
    out = get(None).coupled_distances(quad3.kernel_model(), a, b, 0.1, ks, quad3.theta_star, 5,
                                      np.arange(8, dtype=np.uint64))
    A = np.eye(3) - 0.1 * quad3.hessian_matrix
    want = [np.linalg.norm(np.linalg.matrix_power(A, int(k)) @ (a - b)) for k in ks]
    np.testing.assert_allclose(out[:, :, 0], np.broadcast_to(want, out[:, :, 0].shape),
                               rtol=1e-12, atol=1e-15)


def test_curve_geometric_rate(quad1):
    c = coupling_contraction_curve(quad1, 0.1, [1.0], [-1.0], 60, 1000, 1)
    fit = fit_rate_exponent([(k + 1, v) for k, v in zip(c.ks, c.values)])
    lk = np.array(c.ks, dtype=float)
    slope = np.polyfit(lk, np.log(c.values), 1)[0]
    assert math.exp(slope) <= math.sqrt(1 - 0.1)
    assert fit.r_squared > 0.5


def test_curve_monotone(all_problems):
    for p in all_problems:
        g = 1 / (2 * p.smoothness)
        c = coupling_contraction_curve(p, g, p.theta_star + 1, p.theta_star - 1, 100, 500, 2)
        v, se = np.array(c.values), np.array(c.std_errs)
        assert np.all(v[1:] - v[:-1] <= 3 * np.hypot(se[1:], se[:-1]) + 1e-15)
        assert c.m_gamma == m_gamma(g, p.mu)


def test_curve_csv():
    c = DecayCurve([0, 1], [2.0, 1.0], [0.0, 0.1], 0.1, 28)
    lines = c.to_csv().splitlines()
    assert lines[0] == "# gamma=0.1,m_gamma=28"
    assert lines[1] == "k,value,std_err"
    assert lines[3] == "1,1.0,0.1"


def test_curve_argument_errors(quad1):
    with pytest.raises(ValueError):
        coupling_contraction_curve(quad1, 0.1, [1.0], [0.0], 10, 5, 0, ks=[3, 2])


def test_stationary_zero_noise():
    p = make_problem("quadratic", hessian=1.0)
    est, se = stationary_moment_estimate(p, 0.1, 2, samples=1000)
    assert est == 0.0 and se == 0.0


def test_stationary_ar1(quad1):
    est, se = stationary_moment_estimate(quad1, 0.1, 2, samples=1000000, seed=3)
    assert est == pytest.approx(0.1 / 1.9, rel=0.05)
    assert abs(est - ar1_stationary_var(0.1, 1.0, 1.0)) <= 4 * se


def test_stationary_fourth_moment(quad1):
    est, se = stationary_moment_estimate(quad1, 0.05, 4, samples=1000000, seed=4)
    assert abs(est - 3 * ar1_stationary_var(0.05, 1.0, 1.0) ** 2) <= 4 * se


def test_stationary_scales_with_gamma(quad1):
    r = [stationary_moment_estimate(quad1, g, 2, samples=300000)[0] / g
         for g in (0.04, 0.02, 0.01)]
    assert max(r) / min(r) < 2


def test_stationary_errors(quad1):
    with pytest.raises(ValueError):
        stationary_moment_estimate(quad1, 0.1, 3)
    with pytest.raises(ValueError):
        stationary_moment_estimate(quad1, 0.1, 2, burn_in=5)


def test_stationary_table():
    st_ = stationary_statistics(make_problem("quadratic", hessian=1.0, noise_sd=1.0), 0.1,
                                samples=3000)
    lines = stationary_table_csv([st_]).splitlines()
    assert lines[0] == "gamma,p,estimate,std_err,burn_in,samples,m_gamma"
    assert lines[1].endswith(",280,3000,28")


def test_fit_examples():
    f = fit_rate_exponent([(10, 0.1), (100, 0.01), (1000, 0.001)])
    assert f.slope == pytest.approx(-1.0, abs=1e-12) and f.r_squared == pytest.approx(1.0)
    assert fit_rate_exponent([(1, 2.0), (2, 2.0), (5, 2.0)]).slope == 0.0
    rng = np.random.default_rng(0)
    xs = np.geomspace(10, 1e5, 8)
    ys = 3 * xs ** -0.75 * (1 + rng.uniform(-0.02, 0.02, size=8))
    assert fit_rate_exponent(list(zip(xs, ys))).slope == pytest.approx(-0.75, abs=0.03)


def test_fit_errors():
    with pytest.raises(ValueError):
        fit_rate_exponent([(1, 1.0), (2, 2.0)])
    with pytest.raises(ValueError):
        fit_rate_exponent([(1, 1.0), (2, 0.0), (3, 1.0)])
    with pytest.raises(ValueError):
        fit_rate_exponent([(-1, 1.0), (2, 1.0), (3, 1.0)])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(1e-3, 1e6), st.floats(1e-6, 1e6)), min_size=3,
                max_size=10, unique_by=lambda t: t[0]),
       st.floats(1e-3, 1e3))
def test_fit_scale_equivariance(pts, scale):
    a = fit_rate_exponent(pts)
    b = fit_rate_exponent([(x, scale * y) for x, y in pts])
    assert abs(a.slope - b.slope) <= 1e-12 * max(1.0, abs(a.slope)) * 10
    assert b.intercept == pytest.approx(a.intercept + math.log(scale), abs=1e-9)
    assert 0.0 <= a.r_squared <= 1.0


def test_ratefit_serialization():
    f = fit_rate_exponent([(1, 1.0), (2, 0.5), (4, 0.25)], std_errs=[0.1, 0.1, 0.1])
    assert RateFit.from_dict(f.to_dict()) == f
    assert f.to_csv().splitlines()[1] == "x,y,std_err"


@pytest.mark.parametrize("name", ["quad3", "logcosh3", "regression", "logcosh1"])
def test_decomposition_audit(name, request):
    p = request.getfixturevalue(name)
    run = run_tail_averaged(p, p.theta_star + 1, 0.05 / p.smoothness, 10000,
                            NoiseStream(3, 1, counter=17), record_stride=1)
    assert decomposition_audit(p, run, relative=True) <= 1e-9
    t = decomposition_terms(p, run)
    if p.kind == "quadratic":
        assert not t["eta"].any()


def test_decomposition_zero_noise():
    p = make_problem("quadratic", hessian=[1.0, 2.0])
    run = run_tail_averaged(p, [1.0, 1.0], 0.1, 50, NoiseStream(0, 0), record_stride=1)
    assert decomposition_audit(p, run) <= 1e-15


def test_decomposition_needs_path(quad1):
    run = run_tail_averaged(quad1, [1.0], 0.1, 10, NoiseStream(0, 0))
    with pytest.raises(ValueError):
        decomposition_audit(quad1, run)
