"""Empirical checks of the Markov-chain behaviour of constant-step SGD."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import backend as _backend
from ._io import atomic_write, fmt
from .chains import ChainRun, DivergenceError, check_step_size
from .problems import (ProblemSpec, grad_from_draw_rows, gradient_rows, hessian_at_opt,
                       noise_cov_at_opt)
from .rng import normals

N_BATCHES = 30


def m_gamma(gamma: float, mu: float) -> int:
    """Mixing block length ``ceil(2 log 4 / (gamma mu))``."""
    if gamma <= 0 or mu <= 0:
        raise ValueError("gamma and mu must be positive")
    return int(math.ceil(2.0 * math.log(4.0) / (gamma * mu)))


def cost_function_c(theta, theta_prime, theta_star, gamma: float, mu: float,
                    tau2: float) -> float | np.ndarray:
    """``|x - y| (|x - x*| + |y - x*| + 2 sqrt(2) tau2 sqrt(gamma / mu))``.

    Broadcasts over leading axes; the last axis is the parameter dimension.
    """
    if gamma <= 0 or mu <= 0:
        raise ValueError("gamma and mu must be positive")
    if tau2 < 0:
        raise ValueError("tau2 must be non-negative")
    x = np.asarray(theta, dtype=np.float64)
    y = np.asarray(theta_prime, dtype=np.float64)
    s = np.asarray(theta_star, dtype=np.float64)
    dist = np.linalg.norm(x - y, axis=-1)
    out = dist * (np.linalg.norm(x - s, axis=-1) + np.linalg.norm(y - s, axis=-1)
                  + 2.0 * math.sqrt(2.0) * tau2 * math.sqrt(gamma / mu))
    return float(out) if np.ndim(out) == 0 else out


def tau2_of(problem: ProblemSpec) -> float:
    return math.sqrt(max(float(np.trace(noise_cov_at_opt(problem))), 0.0))


@dataclass
class DecayCurve:
    ks: list
    values: list
    std_errs: list
    gamma: float
    m_gamma: int

    def to_dict(self) -> dict:
        return {"ks": [int(k) for k in self.ks], "values": [float(v) for v in self.values],
                "std_errs": [float(s) for s in self.std_errs], "gamma": self.gamma,
                "m_gamma": self.m_gamma}

    def to_csv(self) -> str:
        lines = [f"# gamma={fmt(self.gamma)},m_gamma={self.m_gamma}", "k,value,std_err"]
        lines += [f"{int(k)},{fmt(v)},{fmt(s)}"
                  for k, v, s in zip(self.ks, self.values, self.std_errs)]
        return "\n".join(lines) + "\n"

    def write(self, path):
        return atomic_write(path, self.to_csv())


def coupling_contraction_curve(problem: ProblemSpec, gamma: float, theta0_a, theta0_b,
                               max_k: int, replications: int, seed: int, ks=None,
                               backend=None) -> DecayCurve:
    """Monte-Carlo mean of ``c(theta_k, theta'_k)`` under synchronous coupling.

    Both chains of replication ``r`` use stream ``(seed, r)``.  By default
    ``ks`` covers ``0 .. max_k`` with at most 201 points.
    """
    check_step_size(problem, gamma)
    if replications < 1:
        raise ValueError("replications must be positive")
    if ks is None:
        ks = np.unique(np.linspace(0, max_k, min(max_k + 1, 201)).round().astype(np.int64))
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size == 0 or ks[0] < 0 or np.any(np.diff(ks) <= 0):
        raise ValueError("ks must be strictly increasing non-negative integers")
    ta = np.asarray(theta0_a, dtype=np.float64)
    tb = np.asarray(theta0_b, dtype=np.float64)
    out = _backend.get(backend).coupled_distances(
        problem.kernel_model(), ta, tb, float(gamma), ks, problem.theta_star, int(seed),
        np.arange(replications, dtype=np.uint64))
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out).all(axis=2))
        raise DivergenceError(int(ks[bad[:, 1].min()]), message="coupled chains diverged")
    tau = tau2_of(problem)
    c = out[:, :, 0] * (out[:, :, 1] + out[:, :, 2]
                        + 2.0 * math.sqrt(2.0) * tau * math.sqrt(gamma / problem.mu))
    se = c.std(axis=0, ddof=1) / math.sqrt(replications) if replications > 1 else 0 * c[0]
    return DecayCurve(ks.tolist(), c.mean(axis=0).tolist(), se.tolist(), float(gamma),
                      m_gamma(gamma, problem.mu))


@dataclass
class StationaryStats:
    """Batch-means summaries of a long stationary run."""

    gamma: float
    p: float
    moment: float
    moment_se: float
    mean: np.ndarray
    mean_se: np.ndarray
    cov: np.ndarray
    cov_se: np.ndarray
    burn_in: int
    samples: int
    m_gamma: int


def _batch_se(batches: np.ndarray, sizes: np.ndarray):
    w = sizes / sizes.sum()
    est = np.tensordot(w, batches, axes=1)
    nb = len(sizes)
    se = batches.std(axis=0, ddof=1) / math.sqrt(nb) if nb > 1 else np.zeros_like(est)
    return est, se


def stationary_statistics(problem: ProblemSpec, gamma: float, p: float = 2,
                          burn_in: int | None = None, samples: int = 10 ** 6, seed: int = 0,
                          stream_index: int = 0, nbatches: int = N_BATCHES,
                          backend=None) -> StationaryStats:
    """Time averages of ``|u|^p``, ``u`` and ``u u'`` with ``u = theta - theta*``.

    The chain starts at the optimum and discards ``burn_in`` steps
    (default ``10 m(gamma)``, the minimum allowed).
    """
    check_step_size(problem, gamma)
    mg = m_gamma(gamma, problem.mu)
    if burn_in is None:
        burn_in = 10 * mg
    if burn_in < 10 * mg:
        raise ValueError(f"burn_in must be at least 10 m(gamma) = {10 * mg}")
    if samples < nbatches:
        raise ValueError("need at least one sample per batch")
    acc = _backend.get(backend).stationary_accumulate(
        problem.kernel_model(), problem.theta_star, float(gamma), int(burn_in), int(samples),
        int(nbatches), float(p), problem.theta_star, int(seed), int(stream_index))
    if acc["diverged"] >= 0:
        raise DivergenceError(acc["diverged"])
    mom, mom_se = _batch_se(acc["moment"], acc["sizes"])
    mean, mean_se = _batch_se(acc["mean"], acc["sizes"])
    cov, cov_se = _batch_se(acc["cov"], acc["sizes"])
    return StationaryStats(float(gamma), float(p), float(mom), float(mom_se), mean, mean_se,
                           cov, cov_se, int(burn_in), int(samples), mg)


def stationary_moment_estimate(problem: ProblemSpec, gamma: float, p: int = 2,
                               burn_in: int | None = None, samples: int = 10 ** 6,
                               seed: int = 0, backend=None) -> tuple[float, float]:
    """Estimate of ``E |theta - theta*|^p`` under the stationary law, with a
    batch-means standard error."""
    if p <= 0 or p % 2:
        raise ValueError("p must be a positive even integer")
    st = stationary_statistics(problem, gamma, p, burn_in, samples, seed, backend=backend)
    return st.moment, st.moment_se


@dataclass
class RateFit:
    slope: float
    intercept: float
    r_squared: float
    points: list
    std_errs: list | None = field(default=None)

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept,
                "r_squared": self.r_squared,
                "points": [[float(x), float(y)] for x, y in self.points],
                "std_errs": None if self.std_errs is None else [float(s) for s in self.std_errs]}

    @classmethod
    def from_dict(cls, d: dict) -> RateFit:
        return cls(d["slope"], d["intercept"], d["r_squared"],
                   [tuple(p) for p in d["points"]], d.get("std_errs"))

    def to_csv(self) -> str:
        se = self.std_errs or [""] * len(self.points)
        lines = [f"# slope={fmt(self.slope)},intercept={fmt(self.intercept)},"
                 f"r_squared={fmt(self.r_squared)}", "x,y,std_err"]
        lines += [f"{fmt(x)},{fmt(y)},{s if s == '' else fmt(s)}"
                  for (x, y), s in zip(self.points, se)]
        return "\n".join(lines) + "\n"


def fit_rate_exponent(points, std_errs=None) -> RateFit:
    """Least-squares fit of ``log y = intercept + slope log x``."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points")
    if any(not (x > 0 and y > 0) or not (np.isfinite(x) and np.isfinite(y)) for x, y in pts):
        raise ValueError("all coordinates must be finite and strictly positive")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    xm, ym = lx.mean(), ly.mean()
    sxx = float(((lx - xm) ** 2).sum())
    if sxx == 0:
        raise ValueError("x values must not all be equal")
    slope = float(((lx - xm) * (ly - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(((ly - ym) ** 2).sum())
    ss_res = float(((ly - intercept - slope * lx) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(slope, intercept, r2, pts, None if std_errs is None else list(std_errs))


def decomposition_terms(problem: ProblemSpec, run: ChainRun) -> dict:
    """Terms of the summation-by-parts identity for ``H*(theta_bar - theta*)``.

    Telescoping ``H*(theta_k - theta*) = (theta_k - theta_{k+1})/gamma
    - eps_{k+1}(theta_k) - eta(theta_k)`` over ``k = n+1 .. 2n`` involves
    ``theta_{2n+1}`` and the draws ``xi_{n+2} .. xi_{2n+1}``; the last one is
    not consumed by the run and is replayed from the stream.
    """
    if run.recorded_path is None or run.record_stride != 1:
        raise ValueError("decomposition audit needs a path recorded with stride 1")
    n, g = run.n, run.gamma
    path = np.asarray(run.recorded_path)
    if path.shape[0] < 2 * n + 1:
        raise ValueError("recorded path must cover iterates 0 .. 2n")
    X = path[n + 1:2 * n + 1]  # theta_{n+1} .. theta_{2n}
    seed, idx = run.stream_key
    counters = np.arange(run.start_counter + n + 1, run.start_counter + 2 * n + 1,
                         dtype=np.uint64)
    Z = normals(seed, idx, counters, problem.draw_size)
    grads = gradient_rows(problem, X)
    noise = grad_from_draw_rows(problem, X, Z) - grads
    theta_end = X[-1] - g * (grads[-1] + noise[-1])  # theta_{2n+1}
    H = hessian_at_opt(problem)
    eta = grads - (X - problem.theta_star) @ H.T
    return {
        "lhs": H @ (run.tail_average - problem.theta_star),
        "boundary": (X[0] - theta_end) / (g * n),
        "noise": -noise.mean(axis=0),
        "eta": -eta.mean(axis=0),
    }


def decomposition_audit(problem: ProblemSpec, run: ChainRun, relative: bool = False) -> float:
    """Max absolute discrepancy of the summation-by-parts identity.

    With ``relative=True`` it is divided by the largest term magnitude.
    """
    t = decomposition_terms(problem, run)
    res = float(np.abs(t["lhs"] - (t["boundary"] + t["noise"] + t["eta"])).max())
    if relative:
        scale = max(float(np.abs(v).max()) for v in t.values())
        return res / scale if scale > 0 else res
    return res


def stationary_table_csv(rows: list[StationaryStats]) -> str:
    lines = ["gamma,p,estimate,std_err,burn_in,samples,m_gamma"]
    lines += [f"{fmt(r.gamma)},{fmt(r.p)},{fmt(r.moment)},{fmt(r.moment_se)},{r.burn_in},"
              f"{r.samples},{r.m_gamma}" for r in rows]
    return "\n".join(lines) + "\n"


def to_json(obj) -> str:
    return json.dumps(obj.to_dict(), indent=2)
