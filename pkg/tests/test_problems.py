import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rrsgd import (CapabilityError, NoiseStream, gradient, hessian_at_opt, make_problem,
                   noise_cov_at_opt, stoch_gradient, third_derivative_at_opt)
from rrsgd.problems import (fourth_derivative_bound, grad_from_draw, grad_from_draw_rows,
                            gradient_rows, hessian, noise_at_opt_from_draw, third_derivative)
from rrsgd.rng import normals

from oracles import fd_jacobian, logcosh_1d


def test_quadratic_gradient_example():
    p = make_problem("quadratic", hessian=np.eye(2))
    np.testing.assert_array_equal(gradient(p, [1.0, 2.0]), [1.0, 2.0])


def test_gradient_zero_at_optimum(all_problems):
    for p in all_problems:
        assert np.linalg.norm(gradient(p, p.theta_star)) < 1e-12


def test_logcosh_gradient_example():
    p = make_problem("logcosh", hessian=1.0, eps=0.5)
    assert gradient(p, [0.3])[0] == pytest.approx(0.3 + 0.5 * np.tanh(0.3), abs=1e-15)


def test_zero_draw_gives_exact_gradient(quad3, logcosh3):
    for p in (quad3, logcosh3):
        th = p.theta_star + 0.3
        np.testing.assert_allclose(grad_from_draw(p, th, np.zeros(p.draw_size)),
                                   gradient(p, th), rtol=0, atol=1e-15)


def test_regression_datum(regression):
    p = regression
    z = np.array([0.4, -1.2, 0.8])
    a = p.noise_factor @ z[:2]
    e = p.label_sd * z[2]
    b = a @ p.theta_star + e
    th = np.array([0.2, 0.1])
    np.testing.assert_allclose(grad_from_draw(p, th, z), a * (a @ th - b), atol=1e-14)
    np.testing.assert_allclose(grad_from_draw(p, p.theta_star, z), -a * e, atol=1e-14)
    np.testing.assert_allclose(noise_at_opt_from_draw(p, z), -a * e, atol=1e-14)


def test_additive_noise_cov_monte_carlo():
    p = make_problem("quadratic", hessian=np.eye(2), noise_sd=2.0)
    z = NoiseStream(3, 0).draws(100000, 2)
    g = np.array([grad_from_draw(p, p.theta_star, zz) for zz in z[:2000]])
    assert g.shape == (2000, 2)
    g = grad_from_draw_rows(p, np.broadcast_to(p.theta_star, (len(z), 2)), z)
    np.testing.assert_allclose(np.cov(g.T), 4.0 * np.eye(2), atol=0.03 * 4.0)
    assert np.all(np.abs(g.mean(axis=0)) < 4 * 2 / np.sqrt(len(z)))


def test_stoch_gradient_advances_one_draw(logcosh3):
    s = NoiseStream(1, 2)
    g = stoch_gradient(logcosh3, logcosh3.theta_star, s)
    assert s.counter == 1
    np.testing.assert_allclose(
        g, grad_from_draw(logcosh3, logcosh3.theta_star, normals(1, 2, 0, logcosh3.draw_size)))


def test_hessian_examples(quad3, regression):
    np.testing.assert_array_equal(hessian_at_opt(quad3), quad3.hessian_matrix)
    p = make_problem("logcosh", hessian=1.0, eps=0.5)
    assert hessian_at_opt(p)[0, 0] == pytest.approx(1.5)
    np.testing.assert_allclose(hessian_at_opt(regression), regression.hessian_matrix)


def test_regression_hessian_monte_carlo(regression):
    z = NoiseStream(11, 0).draws(200000, regression.draw_size)
    a = z[:, :2] @ regression.noise_factor.T
    M = (a[:, :, None] * a[:, None, :]).mean(axis=0)
    np.testing.assert_allclose(M, hessian_at_opt(regression), atol=0.02)


def test_hessian_spd_above_mu(all_problems):
    for p in all_problems:
        H = hessian_at_opt(p)
        np.testing.assert_allclose(H, H.T)
        assert np.linalg.eigvalsh(H)[0] >= p.mu - 1e-12


def test_hessian_matches_finite_differences(all_problems):
    for p in all_problems:
        fd = fd_jacobian(lambda t: gradient(p, t), p.theta_star)
        H = hessian_at_opt(p)
        assert np.abs(fd - H).max() <= 1e-5 * np.abs(H).max()


def test_third_derivative_matches_finite_differences(logcosh1, logcosh3):
    for p in (logcosh1, logcosh3):
        fd = fd_jacobian(lambda t: hessian(p, t), p.theta_star, h=1e-4)
        T = third_derivative_at_opt(p)
        assert np.abs(fd - T).max() <= 1e-4 * np.abs(T).max()
        np.testing.assert_allclose(T, T.transpose(1, 0, 2))
        np.testing.assert_allclose(T, T.transpose(2, 1, 0))


def test_third_derivative_examples(quad3):
    assert not third_derivative_at_opt(quad3).any()
    p = make_problem("logcosh", hessian=1.0, eps=0.5)
    assert third_derivative_at_opt(p)[0, 0, 0] == 0.0
    q = make_problem("logcosh", hessian=1.0, eps=0.5, shift=0.5)
    _, ts, _, s = logcosh_1d(1.0, 0.5, 0.5)
    assert q.theta_star[0] == pytest.approx(ts, abs=1e-12)
    assert third_derivative_at_opt(q)[0, 0, 0] == pytest.approx(s, rel=1e-10)


def test_third_derivative_capability_error(quad1):
    import dataclasses
    odd = dataclasses.replace(quad1, kind="cubic")
    with pytest.raises(CapabilityError):
        third_derivative(odd, odd.theta_star)


def test_newton_optimum_precision(logcosh3):
    assert np.linalg.norm(gradient(logcosh3, logcosh3.theta_star)) <= 1e-13


def test_noise_cov_closed_forms(regression):
    p = make_problem("quadratic", hessian=np.eye(3), noise_sd=0.7)
    np.testing.assert_allclose(noise_cov_at_opt(p), 0.49 * np.eye(3), rtol=1e-15)
    q = make_problem("logcosh", hessian=1.0, eps=0.5)
    assert not noise_cov_at_opt(q).any()
    np.testing.assert_allclose(noise_cov_at_opt(regression),
                               regression.label_sd ** 2 * regression.hessian_matrix)


def test_regression_noise_cov_monte_carlo(regression):
    est, se = noise_cov_at_opt(regression, mc_samples=200000, seed=4, return_stderr=True)
    exact = noise_cov_at_opt(regression)
    assert np.all(np.abs(est - exact) <= 4 * se)
    np.testing.assert_allclose(est, est.T)


def test_unbiasedness(all_problems):
    rng = np.random.default_rng(0)
    for p in all_problems:
        X = p.theta_star + rng.normal(size=(20, p.dim))
        N = 100000
        for i, th in enumerate(X):
            Z = normals(77, i, np.arange(N), p.draw_size)
            G = grad_from_draw_rows(p, np.broadcast_to(th, (N, p.dim)), Z)
            se = G.std(axis=0, ddof=1) / np.sqrt(N)
            assert np.all(np.abs(G.mean(axis=0) - gradient(p, th)) <= 4 * se + 1e-12)


def test_convexity_and_smoothness(all_problems):
    rng = np.random.default_rng(1)
    for p in all_problems:
        A = p.theta_star + 2 * rng.normal(size=(1000, p.dim))
        B = p.theta_star + 2 * rng.normal(size=(1000, p.dim))
        dg = gradient_rows(p, A) - gradient_rows(p, B)
        dx = A - B
        inner = (dg * dx).sum(axis=1)
        sq = (dx * dx).sum(axis=1)
        assert np.all(inner >= p.mu * sq * (1 - 1e-12))
        assert np.all(np.linalg.norm(dg, axis=1) <= p.smoothness * np.sqrt(sq) * (1 + 1e-12))


def test_rows_match_single(logcosh3, regression):
    rng = np.random.default_rng(2)
    for p in (logcosh3, regression):
        X = rng.normal(size=(5, p.dim))
        Z = rng.normal(size=(5, p.draw_size))
        np.testing.assert_allclose(grad_from_draw_rows(p, X, Z),
                                   [grad_from_draw(p, x, z) for x, z in zip(X, Z)])
        np.testing.assert_allclose(gradient_rows(p, X), [gradient(p, x) for x in X])


def test_fourth_derivative_bound_holds():
    p = make_problem("logcosh", hessian=1.0, eps=1.3)
    x = np.linspace(-6, 6, 20001)
    d4 = np.gradient(np.gradient(np.gradient(np.gradient(1.3 * np.log(np.cosh(x)), x), x), x), x)
    assert np.abs(d4[10:-10]).max() <= fourth_derivative_bound(p) * 1.001


@pytest.mark.parametrize("kwargs", [
    dict(kind="cubic", hessian=1.0),
    dict(kind="quadratic"),
    dict(kind="quadratic", hessian=[[1.0, 0.0], [0.0, -1.0]]),
    dict(kind="quadratic", hessian=1.0, noise_sd=1.0, noise_cov=1.0),
    dict(kind="logcosh", hessian=1.0, eps=-2.0),
    dict(kind="linear_regression"),
    dict(kind="linear_regression", covariate_cov=1.0, label_sd=-1.0),
])
def test_invalid_parameters(kwargs):
    with pytest.raises(ValueError):
        make_problem(**kwargs)


def test_dimension_mismatch(quad3):
    with pytest.raises(ValueError):
        gradient(quad3, [1.0, 2.0])


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-0.15, 2.0), st.floats(-3.0, 3.0), st.floats(-2.0, 2.0))
def test_logcosh_optimum_against_bisection(h, eps, c, c0):
    p = make_problem("logcosh", hessian=h, eps=eps, shift=c, center=c0)
    fp = lambda x: h * (x - c0) + eps * np.tanh(x - c)  # noqa: E731
    lo, hi = -60.0, 60.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if fp(mid) > 0 else (mid, hi)
    assert p.theta_star[0] == pytest.approx(0.5 * (lo + hi), abs=1e-10)
