"""Closed-form asymptotic quantities at the optimum.

Tensor contraction convention: ``(T M)_l = sum_ij M_ij T[i, j, l]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .problems import (ProblemSpec, gradient, hessian_at_opt, noise_cov_at_opt,
                       third_derivative_at_opt)

NOTES = (
    "asymptotic_cov is taken to be H^-1 Sigma H^-1, the covariance matching the leading "
    "error term sqrt(Tr Sigma)/sqrt(n) of H(theta_bar - theta*); this identification is "
    "inferred, not stated as a formula.",
    "Higher-order moment assumptions on the noise cannot be verified numerically; moment "
    "experiments check only the predicted scaling.",
)


def _spd_eig(H) -> tuple[np.ndarray, np.ndarray]:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("H must be a square matrix")
    if not np.all(np.isfinite(H)):
        raise ValueError("H must be finite")
    scale = max(1.0, float(np.abs(H).max()))
    if not np.allclose(H, H.T, rtol=0, atol=1e-10 * scale):
        raise ValueError("H must be symmetric")
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    if w[0] <= 0:
        raise ValueError("H must be positive definite")
    return w, V


def lyapunov_solve(H, C) -> np.ndarray:
    """Solve ``H X + X H = C`` in the eigenbasis of ``H``."""
    w, V = _spd_eig(H)
    C = np.asarray(C, dtype=np.float64)
    if C.shape != (len(w), len(w)):
        raise ValueError("C must match the dimension of H")
    Ct = V.T @ C @ V
    return V @ (Ct / (w[:, None] + w[None, :])) @ V.T


def contract(T, M) -> np.ndarray:
    """``(T M)_l = sum_ij M_ij T[i, j, l]``."""
    return np.einsum("ij,ijl->l", np.asarray(M, dtype=np.float64),
                     np.asarray(T, dtype=np.float64))


def first_order_bias(H, third_deriv, C) -> np.ndarray:
    """``Delta_1 = -1/2 H^-1 [T (TC)]`` with ``TC`` the Lyapunov solution for ``C``."""
    H = np.asarray(H, dtype=np.float64)
    T = np.asarray(third_deriv, dtype=np.float64)
    d = H.shape[0]
    if T.shape != (d, d, d):
        raise ValueError(f"third derivative must have shape ({d}, {d}, {d})")
    return -0.5 * np.linalg.solve(H, contract(T, lyapunov_solve(H, C)))


def asymptotic_covariance(H, noise_cov) -> np.ndarray:
    """``H^-1 Sigma H^-1``."""
    _spd_eig(H)
    Hi = np.linalg.inv(np.asarray(H, dtype=np.float64))
    out = Hi @ np.asarray(noise_cov, dtype=np.float64) @ Hi
    return 0.5 * (out + out.T)


def eta_residual(problem: ProblemSpec, theta) -> np.ndarray:
    """Linearisation error ``grad f(theta) - H*(theta - theta*)``."""
    t = np.asarray(theta, dtype=np.float64)
    return gradient(problem, t) - hessian_at_opt(problem) @ (t - problem.theta_star)


def psi_quadratic_term(problem: ProblemSpec, theta) -> np.ndarray:
    """Second-order Taylor term ``1/2 T (u u')`` with ``u = theta - theta*``."""
    u = np.asarray(theta, dtype=np.float64) - problem.theta_star
    if u.shape != (problem.dim,):
        raise ValueError(f"theta must have shape ({problem.dim},)")
    return 0.5 * contract(third_derivative_at_opt(problem), np.outer(u, u))


@dataclass
class TheoryReport:
    hessian: np.ndarray
    noise_cov: np.ndarray
    asymptotic_cov: np.ndarray
    tc_matrix: np.ndarray
    delta1: np.ndarray
    trace_noise_cov: float
    theta_star: np.ndarray
    mu: float
    smoothness: float

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "mu": self.mu,
            "smoothness": self.smoothness,
            "hessian": self.hessian.tolist(),
            "noise_cov": self.noise_cov.tolist(),
            "trace_noise_cov": self.trace_noise_cov,
            "asymptotic_cov": self.asymptotic_cov.tolist(),
            "tc_matrix": self.tc_matrix.tolist(),
            "delta1": self.delta1.tolist(),
            "notes": list(NOTES),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, d: dict) -> TheoryReport:
        a = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(a("hessian"), a("noise_cov"), a("asymptotic_cov"), a("tc_matrix"),
                   a("delta1"), float(d["trace_noise_cov"]), a("theta_star"),
                   float(d["mu"]), float(d["smoothness"]))


def theory_report(problem: ProblemSpec) -> TheoryReport:
    H = hessian_at_opt(problem)
    C = noise_cov_at_opt(problem)
    TC = lyapunov_solve(H, C)
    d1 = first_order_bias(H, third_derivative_at_opt(problem), C)
    return TheoryReport(H, C, asymptotic_covariance(H, C), 0.5 * (TC + TC.T), d1,
                        float(np.trace(C)), problem.theta_star.copy(), problem.mu,
                        problem.smoothness)
