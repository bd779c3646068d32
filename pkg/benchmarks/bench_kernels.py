"""Compare the compiled kernels with the numpy fallback.

    python3 benchmarks/bench_kernels.py [--reps 200] [--n 2000]

Reports nanoseconds per chain step for each backend and the speed-up,
after checking that both backends return the same tail averages.
"""
import argparse
import time

import numpy as np

from rrsgd import backend, make_problem
from rrsgd.chains import run_batch
from rrsgd.diagnostics import stationary_statistics

CASES = {
    "quadratic-1d": dict(kind="quadratic", hessian=1.0, noise_sd=1.0),
    "logcosh-1d": dict(kind="logcosh", hessian=1.0, eps=1.5, shift=2.0, noise_sd=3.0),
    "logcosh-3d": dict(kind="logcosh", hessian=[1.0, 2.0, 3.0], eps=0.5, shift=0.2,
                       noise_cov=[1.0, 0.5, 0.25]),
    "regression-4d": dict(kind="linear_regression", covariate_cov=[1.0, 0.8, 0.6, 0.4],
                          theta_star=1.0, label_sd=0.5),
}


def _time(fn, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=200, help="replications per call")
    ap.add_argument("--n", type=int, default=2000, help="tail length (2n steps)")
    args = ap.parse_args()
    if "compiled" not in backend.available():
        raise SystemExit("compiled extension not built; run pip install -e . first")
    print(f"{'case':<16}{'kernel':<12}{'compiled ns':>12}{'python ns':>12}{'speed-up':>10}")
    for name, params in CASES.items():
        p = make_problem(**params)
        theta0 = p.theta_star + 0.5
        gamma = 0.25 / p.smoothness
        streams = np.arange(args.reps)
        steps = 2 * args.n * args.reps
        res = {}
        for b in ("compiled", "python"):
            res[b] = _time(lambda: run_batch(p, theta0, [gamma, 2 * gamma], args.n, 1, streams,
                                             backend=b))
        diff = np.abs(res["compiled"][1]["tail"] - res["python"][1]["tail"]).max()
        if diff > 1e-10:
            raise SystemExit(f"{name}: backends disagree by {diff:g}")
        tc, tp = (res[b][0] / steps * 1e9 for b in ("compiled", "python"))
        print(f"{name:<16}{'rr-chains':<12}{tc:>12.1f}{tp:>12.1f}{tp / tc:>10.1f}")
        samples = 20000
        st = {}
        for b in ("compiled", "python"):
            st[b] = _time(lambda: stationary_statistics(p, gamma, 2, samples=samples, backend=b),
                          repeat=1)
        total = samples + st["compiled"][1].burn_in
        tc, tp = (st[b][0] / total * 1e9 for b in ("compiled", "python"))
        print(f"{name:<16}{'stationary':<12}{tc:>12.1f}{tp:>12.1f}{tp / tc:>10.1f}")


if __name__ == "__main__":
    main()
