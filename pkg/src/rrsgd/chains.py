"""Constant step-size SGD chains, tail averages and Richardson-Romberg.

Step ``k -> k+1`` of every chain uses draw ``counter0 + k`` of its stream,
so ``theta_{k+1} = theta_k - gamma * grad F(theta_k, xi_{k+1})`` with
``xi_{k+1}`` the stream's draw at counter ``counter0 + k``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import backend as _backend
from .problems import ProblemSpec, grad_from_draw
from .rng import NoiseStream, StreamError


class DivergenceError(ArithmeticError):
    """An iterate became non-finite."""

    def __init__(self, step: int, chain: str = "", message: str | None = None):
        self.step = int(step)
        self.chain = chain
        where = f" in the {chain} chain" if chain else ""
        super().__init__(message or f"non-finite iterate at step {self.step}{where}")


class StepSizeWarning(UserWarning):
    """The step size exceeds 1/(2L)."""


def check_step_size(problem: ProblemSpec, gamma: float, factor: float = 1.0) -> bool:
    """Warn when ``factor * gamma > 1/(2L)``; returns whether the bound holds."""
    limit = 1.0 / (2.0 * problem.smoothness)
    ok = factor * gamma <= limit * (1 + 1e-12)
    if not ok:
        what = f"{factor:g}*gamma" if factor != 1 else "gamma"
        warnings.warn(f"{what} = {factor * gamma:.4g} exceeds 1/(2L) = {limit:.4g}",
                      StepSizeWarning, stacklevel=3)
    return ok


def _check_gamma(gamma) -> float:
    g = float(gamma)
    if not (g > 0 and np.isfinite(g)):
        raise ValueError(f"step size must be positive, got {gamma}")
    return g


def _check_theta(problem: ProblemSpec, theta) -> np.ndarray:
    t = np.asarray(theta, dtype=np.float64)
    if t.shape != (problem.dim,):
        raise ValueError(f"theta must have shape ({problem.dim},)")
    if not np.all(np.isfinite(t)):
        raise ValueError("theta must be finite")
    return t


def sgd_step(problem: ProblemSpec, theta, gamma: float, stream: NoiseStream) -> np.ndarray:
    """One SGD step; consumes exactly one draw of ``stream``."""
    g = _check_gamma(gamma)
    t = _check_theta(problem, theta)
    k = stream.counter
    with np.errstate(over="ignore", invalid="ignore"):
        out = t - g * grad_from_draw(problem, t, stream.draw(problem.draw_size))
    if not np.all(np.isfinite(out)):
        raise DivergenceError(k + 1)
    return out


@dataclass
class ChainRun:
    """Artifacts of one run of ``2n`` SGD steps.

    ``recorded_path[j]`` is ``theta_{j * record_stride}``; ``stream_key``
    and ``start_counter`` allow the consumed draws to be replayed.
    """

    gamma: float
    n: int
    tail_average: np.ndarray
    theta_at_n_plus_1: np.ndarray
    theta_at_2n: np.ndarray
    theta0: np.ndarray
    stream_key: tuple[int, int]
    start_counter: int = 0
    record_stride: int = 0
    recorded_path: np.ndarray | None = field(default=None, repr=False)


@dataclass
class CoupledRun:
    run_gamma: ChainRun
    run_2gamma: ChainRun
    rr_estimate: np.ndarray


def rr_combine(avg_gamma, avg_2gamma) -> np.ndarray:
    """Richardson-Romberg combination ``2 * avg_gamma - avg_2gamma``."""
    a = np.asarray(avg_gamma, dtype=np.float64)
    b = np.asarray(avg_2gamma, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return 2.0 * a - b


def run_batch(problem: ProblemSpec, theta0, gammas, n: int, seed: int, streams,
              counter0: int = 0, record_stride: int = 0, backend=None) -> dict:
    """Run ``len(gammas)`` synchronously coupled chains for each stream.

    Returns arrays ``tail``, ``first`` (theta_{n+1}), ``last`` (theta_{2n})
    of shape ``(R, len(gammas), d)``, the divergence step per chain (-1 if
    finite) and ``noise_tail``, the per-replication average of the gradient
    noise at the optimum over the draws feeding the tail iterates.
    """
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if record_stride and record_stride < 0:
        raise ValueError("record_stride must be non-negative")
    k = _backend.get(backend)
    return k.run_chains(problem.kernel_model(), theta0, np.asarray(gammas, dtype=np.float64),
                        n, int(seed), np.asarray(streams, dtype=np.uint64),
                        int(counter0), int(record_stride or 0))


def _check_counter(stream: NoiseStream, steps: int):
    if stream.counter + steps - 1 > 2 ** 64 - 1:
        raise StreamError("stream exhausted")


def _chain_run(out, c, gamma, n, theta0, stream, counter0, stride) -> ChainRun:
    path = out["path"][0, c].copy() if stride else None
    return ChainRun(gamma, n, out["tail"][0, c].copy(), out["first"][0, c].copy(),
                    out["last"][0, c].copy(), theta0.copy(), stream.key, counter0,
                    int(stride or 0), path)


def run_tail_averaged(problem: ProblemSpec, theta0, gamma: float, n: int,
                      stream: NoiseStream, record_stride: int | None = None,
                      backend=None) -> ChainRun:
    """``2n`` SGD steps from ``theta0`` and the average of iterates ``n+1 .. 2n``.

    Consumes exactly ``2n`` draws of ``stream``.
    """
    g = _check_gamma(gamma)
    t0 = _check_theta(problem, theta0)
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    check_step_size(problem, g)
    _check_counter(stream, 2 * n)
    c0 = stream.counter
    out = run_batch(problem, t0, [g], n, stream.master_seed, [stream.stream_index], c0,
                    record_stride or 0, backend)
    stream.counter += 2 * n
    if out["diverged"][0, 0] >= 0:
        raise DivergenceError(out["diverged"][0, 0])
    return _chain_run(out, 0, g, n, t0, stream, c0, record_stride)


def run_coupled_rr(problem: ProblemSpec, theta0, gamma: float, n: int, stream_key,
                   record_stride: int | None = None, backend=None) -> CoupledRun:
    """Chains with steps ``gamma`` and ``2 gamma`` driven by the same draws.

    Both chains advance in a single interleaved pass over the stream
    ``stream_key = (master_seed, stream_index)``, starting at counter 0.
    """
    g = _check_gamma(gamma)
    t0 = _check_theta(problem, theta0)
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    check_step_size(problem, g, factor=2.0)
    stream = NoiseStream(*stream_key)
    out = run_batch(problem, t0, [g, 2 * g], n, stream.master_seed, [stream.stream_index],
                    0, record_stride or 0, backend)
    div = out["diverged"][0]
    for c, name in ((0, "gamma"), (1, "2gamma")):
        if div[c] >= 0:
            raise DivergenceError(div[c], chain=name)
    a = _chain_run(out, 0, g, n, t0, stream, 0, record_stride)
    b = _chain_run(out, 1, 2 * g, n, t0, stream, 0, record_stride)
    return CoupledRun(a, b, rr_combine(a.tail_average, b.tail_average))
