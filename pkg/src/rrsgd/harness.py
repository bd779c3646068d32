"""Deterministic Monte-Carlo experiments over (n, gamma) grids.

Work is split into blocks of a fixed number of replications.  A block is
a pure function of its problem, grid cell and replication range, and
blocks are reassembled in index order, so results do not depend on the
number of worker processes.

Grid cell ``i`` draws its noise from streams ``(cell_seed(master_seed, i),
r)`` for replications ``r = 0 .. R-1``.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from . import backend as _backend
from ._io import fmt
from .chains import rr_combine, run_batch
from .config import ConfigError, config_hash, resolve, resolve_point
from .diagnostics import RateFit, fit_rate_exponent
from .problems import ProblemSpec, hessian_at_opt, make_problem
from .theory import TheoryReport, theory_report

CSV_HEADER = "estimator,n,gamma,p,error_moment,std_err,bias_norm,replications,valid"
MASK64 = (1 << 64) - 1


class DegenerateFitError(ValueError):
    """Every residual is below its Monte-Carlo floor."""


def cell_seed(master_seed: int, cell_id: int) -> int:
    """SplitMix64 mix of ``(master_seed, cell_id)``."""
    z = (int(master_seed) + (int(cell_id) + 1) * 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


@dataclass(frozen=True)
class GammaRule:
    """``power``: gamma = a n^-beta.  ``list``: explicit step sizes."""

    rule: str
    a: float = 1.0
    beta: float = 0.5
    gammas: tuple = ()

    @classmethod
    def from_dict(cls, d: dict) -> GammaRule:
        if d["rule"] == "power":
            return cls("power", float(d.get("a", 1.0)), float(d["beta"]))
        return cls("list", gammas=tuple(float(g) for g in d["gammas"]))

    def to_dict(self) -> dict:
        if self.rule == "power":
            return {"rule": "power", "a": self.a, "beta": self.beta}
        return {"rule": "list", "gammas": list(self.gammas)}

    def gamma_for(self, n: int) -> float:
        if self.rule != "power":
            raise ValueError("only power rules map n to a single step size")
        return self.a * float(n) ** (-self.beta)


@dataclass
class ExperimentConfig:
    problem: dict
    estimators: tuple = ("PR", "RR")
    n_grid: tuple | None = None
    gamma_rule: dict = field(default_factory=dict)  # estimator -> GammaRule
    horizon: float | None = None
    replications: int = 1000
    master_seed: int = 0
    p_moments: tuple = (2,)
    theta0: object = "offset(1)"
    bias_estimator: str = "control_variate"
    block_size: int = 1000

    @classmethod
    def from_dict(cls, cfg: dict) -> ExperimentConfig:
        """Build from a configuration dict with ``problem``, ``estimator`` and ``grid``."""
        r = resolve(cfg, need=("problem", "grid"))
        est, grid = r["estimator"], r["grid"]
        rule = grid["gamma_rule"]
        if "rule" in rule:
            rules = {e: GammaRule.from_dict(rule) for e in est["estimators"]}
        else:
            rules = {e: GammaRule.from_dict(rule[e]) for e in est["estimators"]}
        out = cls(r["problem"], tuple(est["estimators"]),
                  None if grid.get("n") is None else tuple(int(n) for n in grid["n"]),
                  rules, grid.get("horizon"), int(grid["replications"]),
                  int(grid["master_seed"]), tuple(int(p) for p in est["p_moments"]),
                  est["theta0"], est["bias_estimator"], int(grid["block_size"]))
        out.validate()
        return out

    def to_dict(self) -> dict:
        rules = {e: self.gamma_rule[e].to_dict() for e in self.estimators}
        grid = {"gamma_rule": rules, "replications": self.replications,
                "master_seed": self.master_seed, "block_size": self.block_size}
        if self.horizon is not None:
            grid["horizon"] = self.horizon
        else:
            grid["n"] = list(self.n_grid)
        return {"problem": dict(self.problem),
                "estimator": {"estimators": list(self.estimators),
                              "theta0": self.theta0, "p_moments": list(self.p_moments),
                              "bias_estimator": self.bias_estimator},
                "grid": grid}

    def build_problem(self) -> ProblemSpec:
        try:
            return make_problem(**self.problem)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"problem: {exc}") from None

    def cells(self) -> list[tuple[str, int, float]]:
        """Grid cells ``(estimator, n, gamma)`` in canonical order."""
        out = []
        for est in self.estimators:
            rule = self.gamma_rule[est]
            if rule.rule == "power":
                out += [(est, n, rule.gamma_for(n)) for n in self.n_grid]
            elif self.horizon is not None:
                out += [(est, max(1, int(round(self.horizon / g))), g) for g in rule.gammas]
            else:
                out += [(est, n, g) for n in self.n_grid for g in rule.gammas]
        return out

    def validate(self) -> ProblemSpec:
        """Check every invariant before any computation; returns the problem."""
        errors = []
        try:
            problem = self.build_problem()
        except ConfigError as exc:
            raise ConfigError(exc.errors) from None
        if self.replications < 2:
            errors.append("replications must be at least 2")
        if self.horizon is None and not self.n_grid:
            errors.append("n grid is empty")
        if self.horizon is not None and any(r.rule == "power" for r in self.gamma_rule.values()):
            errors.append("horizon requires explicit step-size lists")
        try:
            resolve_point(self.theta0, problem.theta_star)
        except ConfigError as exc:
            errors += exc.errors
        if not errors:
            limit = 1.0 / (2.0 * problem.smoothness)
            for est, n, g in self.cells():
                if est == "RR" and 2 * g > limit * (1 + 1e-12):
                    errors.append(f"RR at n={n}: 2*gamma = {2 * g:.4g} exceeds 1/(2L) = "
                                  f"{limit:.4g}")
        if errors:
            raise ConfigError(errors)
        return problem


@dataclass
class Row:
    estimator: str
    n: int
    gamma: float
    p: int
    error_moment: float
    std_err: float
    bias_vector: np.ndarray
    bias_norm: float
    bias_std_err: np.ndarray
    bias_vector_plain: np.ndarray
    unweighted_moment: float
    unweighted_std_err: float
    replications: int
    divergences: int

    @property
    def valid(self) -> bool:
        return self.divergences == 0

    def to_dict(self) -> dict:
        return {"estimator": self.estimator, "n": self.n, "gamma": self.gamma, "p": self.p,
                "error_moment": self.error_moment, "std_err": self.std_err,
                "bias_vector": self.bias_vector.tolist(), "bias_norm": self.bias_norm,
                "bias_std_err": self.bias_std_err.tolist(),
                "bias_vector_plain": self.bias_vector_plain.tolist(),
                "unweighted_moment": self.unweighted_moment,
                "unweighted_std_err": self.unweighted_std_err,
                "replications": self.replications, "divergences": self.divergences,
                "valid": self.valid}

    @classmethod
    def from_dict(cls, d: dict) -> Row:
        a = lambda k: np.asarray(d[k], dtype=np.float64)  # noqa: E731
        return cls(d["estimator"], int(d["n"]), float(d["gamma"]), int(d["p"]),
                   float(d["error_moment"]), float(d["std_err"]), a("bias_vector"),
                   float(d["bias_norm"]), a("bias_std_err"), a("bias_vector_plain"),
                   float(d["unweighted_moment"]), float(d["unweighted_std_err"]),
                   int(d["replications"]), int(d["divergences"]))

    def csv_line(self) -> str:
        return ",".join([self.estimator, str(self.n), fmt(self.gamma), str(self.p),
                         fmt(self.error_moment), fmt(self.std_err), fmt(self.bias_norm),
                         str(self.replications), "true" if self.valid else "false"])


@dataclass
class ExperimentResult:
    rows: list
    rate_fits: dict
    theory: TheoryReport
    provenance: dict
    config: dict = field(default_factory=dict)
    fit_notes: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv_line() for r in self.rows]) + "\n"

    def to_dict(self) -> dict:
        return {"config": self.config, "provenance": self.provenance,
                "theory": self.theory.to_dict(),
                "rate_fits": {k: (None if v is None else v.to_dict())
                              for k, v in self.rate_fits.items()},
                "fit_notes": self.fit_notes,
                "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentResult:
        fits = {k: (None if v is None else RateFit.from_dict(v))
                for k, v in d.get("rate_fits", {}).items()}
        return cls([Row.from_dict(r) for r in d["rows"]], fits,
                   TheoryReport.from_dict(d["theory"]), d.get("provenance", {}),
                   d.get("config", {}), d.get("fit_notes", {}))


def jackknife_root_moment(y: np.ndarray, p: int) -> tuple[float, float]:
    """``mean(y)^(1/p)`` and its leave-one-out jackknife standard error."""
    y = np.asarray(y, dtype=np.float64)
    R = len(y)
    est = float(y.mean()) ** (1.0 / p)
    if R < 2:
        return est, float("nan")
    loo = np.clip((y.sum() - y) / (R - 1), 0.0, None) ** (1.0 / p)
    se = math.sqrt((R - 1) / R * float(((loo - loo.mean()) ** 2).sum()))
    return est, se


def _block(problem, estimator, n, gamma, seed, lo, hi, theta0, backend):
    gammas = [gamma] if estimator == "PR" else [gamma, 2 * gamma]
    out = run_batch(problem, theta0, gammas, n, seed, np.arange(lo, hi, dtype=np.uint64),
                    backend=backend)
    tail = out["tail"]
    est = tail[:, 0] if estimator == "PR" else rr_combine(tail[:, 0], tail[:, 1])
    err = est - problem.theta_star
    div = (out["diverged"] >= 0).any(axis=1)
    return err, out["noise_tail"], div


def _blocks(R: int, size: int):
    return [(lo, min(lo + size, R)) for lo in range(0, R, size)]


def _map(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_block(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        futs = [ex.submit(_block, *t) for t in tasks]
        return [f.result() for f in futs]


def summarize(problem: ProblemSpec, estimator: str, n: int, gamma: float, p_list,
              err: np.ndarray, noise_tail: np.ndarray, diverged: np.ndarray,
              bias_estimator: str = "control_variate") -> list[Row]:
    """Rows from per-replication errors ``theta_hat - theta*``.

    The control-variate bias adds ``H*^-1 W`` to each error, ``W`` being the
    replication's average gradient noise at the optimum over the draws
    feeding the tail.  ``W`` has mean exactly zero, so the estimate stays
    unbiased while the leading fluctuation of the error cancels.
    """
    R = len(err)
    ndiv = int(diverged.sum())
    H = hessian_at_opt(problem)
    d = problem.dim
    nan = float("nan")
    rows = []
    if ndiv:
        for p in p_list:
            rows.append(Row(estimator, n, gamma, p, nan, nan, np.full(d, nan), nan,
                            np.full(d, nan), np.full(d, nan), nan, nan, R, ndiv))
        return rows
    plain = err.mean(axis=0)
    if bias_estimator == "control_variate":
        adj = err + np.linalg.solve(H, noise_tail.T).T
    else:
        adj = err
    bias = adj.mean(axis=0)
    bias_se = adj.std(axis=0, ddof=1) / math.sqrt(R)
    hn = np.linalg.norm(err @ H.T, axis=1)
    un = np.linalg.norm(err, axis=1)
    for p in p_list:
        m, se = jackknife_root_moment(hn ** p, p)
        um, use = jackknife_root_moment(un ** p, p)
        rows.append(Row(estimator, int(n), float(gamma), int(p), m, se, bias,
                        float(np.linalg.norm(bias)), bias_se, plain, um, use, R, 0))
    return rows


def estimate_error_moments(problem: ProblemSpec, estimator: str, n: int, gamma: float,
                           p_list, replications: int, master_seed: int, theta0=None,
                           bias_estimator: str = "control_variate", workers: int = 1,
                           block_size: int = 1000, backend=None) -> list[Row]:
    """Monte-Carlo rows for one grid point; replication ``r`` uses stream index ``r``."""
    if estimator not in ("PR", "RR"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if replications < 2:
        raise ValueError("replications must be at least 2")
    if estimator == "RR" and 2 * gamma > 1.0 / (2.0 * problem.smoothness) * (1 + 1e-12):
        raise ValueError("RR needs 2*gamma <= 1/(2L)")
    t0 = problem.theta_star + 1.0 / math.sqrt(problem.dim) if theta0 is None else \
        np.asarray(theta0, dtype=np.float64)
    tasks = [(problem, estimator, int(n), float(gamma), int(master_seed), lo, hi, t0, backend)
             for lo, hi in _blocks(replications, block_size)]
    parts = _map(tasks, workers)
    err = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    div = np.concatenate([p[2] for p in parts])
    return summarize(problem, estimator, n, gamma, p_list, err, w, div, bias_estimator)


def second_order_residual(result: ExperimentResult, estimator: str,
                          gamma_rule: GammaRule | None = None, p: int = 2,
                          min_points: int = 3) -> RateFit:
    """Fit the exponent of ``r_n = max(error_moment - sqrt(Tr Sigma / n), floor)``.

    ``floor`` is twice the row's standard error; residuals at or below it
    are censored to the floor.  Raises :class:`DegenerateFitError` when no
    residual clears its floor.
    """
    rows = [r for r in result.rows if r.estimator == estimator and r.p == p and r.valid]
    if gamma_rule is not None:
        rows = [r for r in rows if math.isclose(r.gamma, gamma_rule.gamma_for(r.n),
                                                rel_tol=1e-9)]
    by_n = {}
    for r in rows:
        by_n.setdefault(r.n, r)
    rows = [by_n[n] for n in sorted(by_n)]
    if len(rows) < min_points:
        raise ValueError(f"need at least {min_points} n-grid points, got {len(rows)}")
    tr = result.theory.trace_noise_cov
    pts, floors, above = [], [], 0
    for r in rows:
        resid = r.error_moment - math.sqrt(tr / r.n)
        floor = 2.0 * r.std_err
        if resid > floor:
            above += 1
            pts.append((r.n, resid))
        elif floor > 0:
            pts.append((r.n, floor))
        else:
            continue
        floors.append(floor)
    if above == 0:
        raise DegenerateFitError("all residuals are at the Monte-Carlo floor")
    if len(pts) < min_points:
        raise DegenerateFitError("too few usable residuals")
    return fit_rate_exponent(pts, std_errs=[f / 2 for f in floors])


def _rate_fits(cfg: ExperimentConfig, result: ExperimentResult):
    fits, notes = {}, {}
    p0 = cfg.p_moments[0]
    for est in cfg.estimators:
        rule = cfg.gamma_rule[est]
        rows = [r for r in result.rows if r.estimator == est and r.valid]
        key = est.lower()
        if rule.rule == "list":
            # bias against gamma at the largest n available for each gamma
            best = {}
            for r in rows:
                if r.p == p0 and (r.gamma not in best or r.n > best[r.gamma].n):
                    best[r.gamma] = r
            pts = [(g, best[g].bias_norm) for g in sorted(best) if best[g].bias_norm > 0]
            if len(pts) >= 3:
                fits[f"{key}_bias_vs_gamma"] = fit_rate_exponent(pts)
            for g in rule.gammas:
                for p in cfg.p_moments:
                    sel = sorted((r.n, r.error_moment) for r in rows
                                 if r.gamma == g and r.p == p and r.error_moment > 0)
                    if len({n for n, _ in sel}) >= 3:
                        fits[f"{key}_error_vs_n_p{p}_gamma{fmt(g)}"] = fit_rate_exponent(sel)
            continue
        for p in cfg.p_moments:
            sel = sorted((r.n, r.error_moment) for r in rows if r.p == p and r.error_moment > 0)
            if len(sel) >= 3:
                fits[f"{key}_error_vs_n_p{p}"] = fit_rate_exponent(sel)
        if 2 in cfg.p_moments and len({r.n for r in rows}) >= 3:
            name = f"{key}_second_order"
            try:
                fits[name] = second_order_residual(result, est, rule)
            except (DegenerateFitError, ValueError) as exc:
                fits[name] = None
                notes[name] = str(exc)
    return fits, notes


def run_experiment(config: ExperimentConfig | dict, workers: int | None = None,
                   backend=None, progress=None) -> ExperimentResult:
    """Run every grid cell; deterministic given the configuration."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    problem = cfg.validate()
    theory = theory_report(problem)
    t0 = resolve_point(cfg.theta0, problem.theta_star)
    if workers is None:
        workers = os.cpu_count() or 1
    cells = cfg.cells()
    blocks = _blocks(cfg.replications, cfg.block_size)
    tasks = [(problem, est, n, g, cell_seed(cfg.master_seed, i), lo, hi, t0, backend)
             for i, (est, n, g) in enumerate(cells) for lo, hi in blocks]
    parts = _map(tasks, workers)
    rows = []
    nb = len(blocks)
    for i, (est, n, g) in enumerate(cells):
        mine = parts[i * nb:(i + 1) * nb]
        err = np.concatenate([p[0] for p in mine])
        w = np.concatenate([p[1] for p in mine])
        div = np.concatenate([p[2] for p in mine])
        rows += summarize(problem, est, n, g, cfg.p_moments, err, w, div, cfg.bias_estimator)
        if progress:
            progress(f"{est} n={n} gamma={g:.4g} done")
    cfg_dict = cfg.to_dict()
    prov = {"config_hash": config_hash(cfg_dict), "master_seed": cfg.master_seed,
            "code_version": __version__, "backend": _backend.get(backend).__name__}
    result = ExperimentResult(rows, {}, theory, prov, cfg_dict)
    result.rate_fits, result.fit_notes = _rate_fits(cfg, result)
    return result
