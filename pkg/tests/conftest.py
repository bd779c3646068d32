import numpy as np
import pytest

from rrsgd import make_problem


@pytest.fixture
def quad1():
    return make_problem("quadratic", hessian=1.0, noise_sd=1.0)


@pytest.fixture
def quad3():
    H = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.5]])
    C = np.array([[1.0, 0.2, 0.1], [0.2, 0.5, 0.0], [0.1, 0.0, 0.8]])
    return make_problem("quadratic", hessian=H, noise_cov=C, theta_star=[1.0, -1.0, 0.5])


@pytest.fixture
def logcosh1():
    return make_problem("logcosh", hessian=1.0, eps=1.5, shift=2.0, noise_sd=3.0)


@pytest.fixture
def logcosh3():
    return make_problem("logcosh", hessian=[[1.5, 0.2, 0.0], [0.2, 1.0, 0.1], [0.0, 0.1, 2.0]],
                        eps=0.6, shift=[0.3, -0.5, 1.0], center=[0.1, 0.0, -0.2],
                        noise_cov=[0.5, 1.0, 0.7])


@pytest.fixture
def regression():
    M = np.array([[1.0, 0.3], [0.3, 0.6]])
    return make_problem("linear_regression", covariate_cov=M, theta_star=[1.0, -2.0],
                        label_sd=0.5)


@pytest.fixture
def all_problems(quad1, quad3, logcosh1, logcosh3, regression):
    return [quad1, quad3, logcosh1, logcosh3, regression]


@pytest.fixture(scope="session")
def ar1_tail_averages():
    """PR tail averages of 1D quadratic (h = sigma = 1), gamma = 0.01, n = 1e5, R = 1e3."""
    from rrsgd.chains import run_batch
    p = make_problem("quadratic", hessian=1.0, noise_sd=1.0)
    out = run_batch(p, np.ones(1), [0.01], 100000, 2024, np.arange(1000))
    return p, out["tail"][:, 0, 0]
