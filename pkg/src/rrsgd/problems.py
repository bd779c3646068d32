"""Strongly convex test problems with stochastic gradient oracles.

Three kinds are supported:

``quadratic``
    ``f(x) = 1/2 (x - x*)' H (x - x*)`` with additive Gaussian noise.
``logcosh``
    ``f(x) = 1/2 (x - c0)' H (x - c0) + eps * sum_i log cosh(x_i - s_i)``
    with additive Gaussian noise.  The optimum is found by damped Newton.
``linear_regression``
    Covariates ``a ~ N(0, M)``, labels ``b = a' x* + e`` with
    ``e ~ N(0, sigma^2)``, and ``grad F(x, (a, b)) = a (a' x - b)``.

A draw of the noise is a vector of standard normals ``z``: ``d`` of them
for additive noise (scaled by a Cholesky-type factor of the covariance),
``d + 1`` for regression (covariates, then the label noise).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .rng import NoiseStream

KINDS = ("quadratic", "logcosh", "linear_regression")

# sup |g'''| and sup |g''''| for g = log cosh
_LOGCOSH_D3 = 4.0 / (3.0 * np.sqrt(3.0))
_LOGCOSH_D4 = 2.0


class CapabilityError(RuntimeError):
    """The requested quantity is not available for this problem."""


class KernelModel(NamedTuple):
    """Flat description of a problem consumed by the compiled kernels."""

    kind: int
    draw_size: int
    A: np.ndarray
    ref: np.ndarray
    eps: float
    shift: np.ndarray
    S: np.ndarray
    label_sd: float


def _matrix(value, d: int, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = float(a) * np.eye(d)
    elif a.ndim == 1:
        a = np.diag(a)
    if a.shape != (d, d):
        raise ValueError(f"{name} must be {d}x{d}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError(f"{name} must be symmetric")
    return 0.5 * (a + a.T)


def _vector(value, d: int, name: str) -> np.ndarray:
    v = np.asarray(value, dtype=np.float64)
    if v.ndim == 0:
        v = np.full(d, float(v))
    if v.shape != (d,) or not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be a finite vector of length {d}")
    return v


def _psd_factor(C: np.ndarray) -> np.ndarray:
    # S with S S' = C; Cholesky when possible, else symmetric square root
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(C)
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise ValueError("covariance must be positive semidefinite")
        return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """An immutable problem instance.  Build it with :func:`make_problem`."""

    kind: str
    dim: int
    hessian_matrix: np.ndarray  # H for quadratic/logcosh, M for regression
    center: np.ndarray  # x* (quadratic, regression) or c0 (logcosh)
    eps: float
    shift: np.ndarray
    noise_cov: np.ndarray  # additive noise covariance (zero for regression)
    label_sd: float
    theta_star: np.ndarray
    mu: float
    smoothness: float
    noise_factor: np.ndarray = field(repr=False)

    @property
    def draw_size(self) -> int:
        return self.dim + (1 if self.kind == "linear_regression" else 0)

    def params(self) -> dict:
        """Constructor parameters, suitable for :func:`make_problem`."""
        out = {"kind": self.kind, "dim": self.dim}
        if self.kind == "linear_regression":
            out.update(covariate_cov=self.hessian_matrix.tolist(),
                       theta_star=self.center.tolist(), label_sd=self.label_sd)
            return out
        out.update(hessian=self.hessian_matrix.tolist(), noise_cov=self.noise_cov.tolist())
        if self.kind == "quadratic":
            out["theta_star"] = self.center.tolist()
        else:
            out.update(center=self.center.tolist(), eps=self.eps, shift=self.shift.tolist())
        return out

    def kernel_model(self) -> KernelModel:
        if self.kind == "linear_regression":
            return KernelModel(1, self.dim + 1, self.hessian_matrix, self.center, 0.0,
                               np.zeros(self.dim), self.noise_factor, self.label_sd)
        eps = self.eps if self.kind == "logcosh" else 0.0
        return KernelModel(0, self.dim, self.hessian_matrix, self.center, eps, self.shift,
                           self.noise_factor, 0.0)


def _logcosh_grad(H, c0, eps, s, x):
    return H @ (x - c0) + eps * np.tanh(x - s)


def _newton_logcosh(H, c0, eps, s, tol=1e-13, max_iter=200):
    x = c0.copy()
    g = _logcosh_grad(H, c0, eps, s, x)
    for _ in range(max_iter):
        gn = np.linalg.norm(g)
        if gn <= tol:
            return x
        J = H + np.diag(eps / np.cosh(x - s) ** 2)
        step = np.linalg.solve(J, g)
        t = 1.0
        while True:
            xn = x - t * step
            gnew = _logcosh_grad(H, c0, eps, s, xn)
            if np.linalg.norm(gnew) < gn or t < 1e-12:
                break
            t *= 0.5
        if np.array_equal(xn, x):
            return x
        x, g = xn, gnew
    if np.linalg.norm(g) > 1e3 * tol:
        raise RuntimeError("Newton iteration for the optimum did not converge")
    return x


def make_problem(kind: str, dim: int | None = None, *, hessian=None, theta_star=None,
                 center=None, eps: float = 0.0, shift=None, noise_cov=None,
                 noise_sd: float | None = None, covariate_cov=None,
                 label_sd: float = 1.0) -> ProblemSpec:
    """Validate parameters and build a :class:`ProblemSpec`.

    Scalars and vectors are accepted for matrices (``h * I`` and
    ``diag(v)``).  ``noise_sd`` is shorthand for ``noise_cov = sd^2 I``.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
    if dim is None:
        for v in (hessian, covariate_cov, theta_star, center):
            if v is not None and np.ndim(v) >= 1:
                dim = len(v)
                break
        else:
            dim = 1
    dim = int(dim)
    if dim < 1:
        raise ValueError("dim must be positive")

    if kind == "linear_regression":
        if covariate_cov is None:
            raise ValueError("linear_regression needs covariate_cov")
        M = _matrix(covariate_cov, dim, "covariate_cov")
        ts = _vector(0.0 if theta_star is None else theta_star, dim, "theta_star")
        label_sd = float(label_sd)
        if not np.isfinite(label_sd) or label_sd < 0:
            raise ValueError("label_sd must be non-negative")
        w = np.linalg.eigvalsh(M)
        if w[0] <= 0:
            raise ValueError("covariate_cov must be positive definite")
        # L1 from E|a a'u|^2 = u'(tr(M) M + 2 M^2) u <= (tr M + 2 lmax) u'Mu
        L = max(float(w[-1]), float(np.trace(M) + 2 * w[-1]))
        return ProblemSpec(kind, dim, M, ts, 0.0, np.zeros(dim), np.zeros((dim, dim)),
                           label_sd, ts, float(w[0]), L, _psd_factor(M))

    if hessian is None:
        raise ValueError(f"{kind} needs hessian")
    H = _matrix(hessian, dim, "hessian")
    if noise_cov is not None and noise_sd is not None:
        raise ValueError("give noise_cov or noise_sd, not both")
    if noise_sd is not None:
        noise_cov = float(noise_sd) ** 2
    C = _matrix(0.0 if noise_cov is None else noise_cov, dim, "noise_cov")
    S = _psd_factor(C)
    w = np.linalg.eigvalsh(H)
    if kind == "quadratic":
        if w[0] <= 0:
            raise ValueError("hessian must be positive definite")
        ts = _vector(0.0 if theta_star is None else theta_star, dim, "theta_star")
        return ProblemSpec(kind, dim, H, ts, 0.0, np.zeros(dim), C, 0.0, ts,
                           float(w[0]), float(w[-1]), S)

    eps = float(eps)
    c0 = _vector(0.0 if center is None else center, dim, "center")
    s = _vector(0.0 if shift is None else shift, dim, "shift")
    mu = float(w[0]) + min(eps, 0.0)
    if not np.isfinite(eps) or mu <= 0:
        raise ValueError("logcosh problem must be strongly convex: need min eig(H) + min(eps, 0) > 0")
    L = max(float(w[-1]) + max(eps, 0.0), abs(eps) * _LOGCOSH_D3, abs(eps) * _LOGCOSH_D4)
    ts = _newton_logcosh(H, c0, eps, s)
    return ProblemSpec(kind, dim, H, c0, eps, s, C, 0.0, ts, mu, L, S)


def _check_theta(problem: ProblemSpec, theta) -> np.ndarray:
    t = np.asarray(theta, dtype=np.float64)
    if t.shape != (problem.dim,):
        raise ValueError(f"theta must have shape ({problem.dim},), got {t.shape}")
    return t


def gradient(problem: ProblemSpec, theta) -> np.ndarray:
    """Exact gradient of f."""
    t = _check_theta(problem, theta)
    if problem.kind == "logcosh":
        return _logcosh_grad(problem.hessian_matrix, problem.center, problem.eps,
                             problem.shift, t)
    return problem.hessian_matrix @ (t - problem.center)


def grad_from_draw(problem: ProblemSpec, theta, z) -> np.ndarray:
    """Stochastic gradient for an explicit draw ``z`` of standard normals."""
    t = _check_theta(problem, theta)
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (problem.draw_size,):
        raise ValueError(f"draw must have shape ({problem.draw_size},)")
    d = problem.dim
    if problem.kind == "linear_regression":
        a = problem.noise_factor @ z[:d]
        b = a @ problem.center + problem.label_sd * z[d]
        return a * (a @ t - b)
    return gradient(problem, t) + problem.noise_factor @ z[:d]


def stoch_gradient(problem: ProblemSpec, theta, stream: NoiseStream) -> np.ndarray:
    """Stochastic gradient using the next draw of ``stream`` (advances it by one)."""
    t = _check_theta(problem, theta)
    return grad_from_draw(problem, t, stream.draw(problem.draw_size))


def noise_at_opt_from_draw(problem: ProblemSpec, z) -> np.ndarray:
    """``grad F(theta*, z)``, the gradient noise at the optimum."""
    z = np.asarray(z, dtype=np.float64)
    a = z[..., :problem.dim] @ problem.noise_factor.T
    if problem.kind == "linear_regression":
        return -problem.label_sd * z[..., problem.dim:problem.dim + 1] * a
    return a


def hessian(problem: ProblemSpec, theta) -> np.ndarray:
    t = _check_theta(problem, theta)
    if problem.kind == "logcosh":
        return problem.hessian_matrix + np.diag(problem.eps / np.cosh(t - problem.shift) ** 2)
    return problem.hessian_matrix.copy()


def hessian_at_opt(problem: ProblemSpec) -> np.ndarray:
    return hessian(problem, problem.theta_star)


def third_derivative(problem: ProblemSpec, theta) -> np.ndarray:
    t = _check_theta(problem, theta)
    d = problem.dim
    T = np.zeros((d, d, d))
    if problem.kind == "logcosh":
        u = t - problem.shift
        diag = -2.0 * problem.eps * np.tanh(u) / np.cosh(u) ** 2
        T[np.arange(d), np.arange(d), np.arange(d)] = diag
    elif problem.kind not in KINDS:
        raise CapabilityError(f"no third derivative for kind {problem.kind!r}")
    return T


def third_derivative_at_opt(problem: ProblemSpec) -> np.ndarray:
    """Symmetric tensor ``T[i, j, l] = d^3 f / dx_i dx_j dx_l`` at the optimum."""
    return third_derivative(problem, problem.theta_star)


def fourth_derivative_bound(problem: ProblemSpec) -> float:
    """Operator-norm bound on the fourth derivative of f."""
    return abs(problem.eps) * _LOGCOSH_D4 if problem.kind == "logcosh" else 0.0


def noise_cov_at_opt(problem: ProblemSpec, mc_samples: int = 0, seed: int = 0,
                     return_stderr: bool = False):
    """Covariance of the gradient noise at the optimum.

    Closed forms exist for every built-in kind (``sigma^2 M`` for
    regression).  With ``mc_samples > 0`` a Monte-Carlo estimate from
    the problem's own sampler is returned instead; ``return_stderr`` adds
    the elementwise standard error.
    """
    if mc_samples and mc_samples > 0:
        stream = NoiseStream(seed, 0)
        z = stream.draws(int(mc_samples), problem.draw_size)
        g = noise_at_opt_from_draw(problem, z)
        outer = g[:, :, None] * g[:, None, :]
        est = outer.mean(axis=0)
        if return_stderr:
            se = outer.std(axis=0, ddof=1) / np.sqrt(len(g)) if len(g) > 1 else np.zeros_like(est)
            return est, se
        return est
    if problem.kind == "linear_regression":
        est = problem.label_sd ** 2 * problem.hessian_matrix
    else:
        est = problem.noise_cov.copy()
    return (est, np.zeros_like(est)) if return_stderr else est



def gradient_rows(problem: ProblemSpec, X) -> np.ndarray:
    """``gradient`` applied to each row of an ``(m, d)`` array."""
    X = np.asarray(X, dtype=np.float64)
    out = (X - problem.center) @ problem.hessian_matrix.T
    if problem.kind == "logcosh":
        out = out + problem.eps * np.tanh(X - problem.shift)
    return out


def grad_from_draw_rows(problem: ProblemSpec, X, Z) -> np.ndarray:
    """``grad_from_draw`` applied row by row to ``(m, d)`` iterates and ``(m, draw_size)`` draws."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    d = problem.dim
    if problem.kind == "linear_regression":
        a = Z[:, :d] @ problem.noise_factor.T
        b = a @ problem.center + problem.label_sd * Z[:, d]
        return a * ((a * X).sum(axis=1) - b)[:, None]
    return gradient_rows(problem, X) + Z[:, :d] @ problem.noise_factor.T
