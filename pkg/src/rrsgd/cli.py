"""Command-line interface: ``rrsgd {theory,run,diagnose,experiment,fit}``.

Exit codes: 0 success, 2 invalid configuration, 3 capability error,
4 numerical failure (divergence or divergence-invalidated rows).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._io import atomic_write, fmt
from .chains import ChainRun, DivergenceError, run_batch
from .config import ConfigError, apply_overrides, config_hash, load, resolve, resolve_point
from .diagnostics import (coupling_contraction_curve, decomposition_audit,
                          stationary_statistics, stationary_table_csv)
from .harness import (DegenerateFitError, ExperimentConfig, ExperimentResult, cell_seed,
                      run_experiment, second_order_residual)
from .problems import CapabilityError, make_problem
from .theory import theory_report

EXIT_OK, EXIT_CONFIG, EXIT_CAPABILITY, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("rrsgd")


def _problem(cfg):
    try:
        return make_problem(**cfg["problem"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem: {exc}") from None


def _provenance(cfg: dict) -> dict:
    return {"config_hash": config_hash(cfg), "code_version": __version__}


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def cmd_theory(cfg: dict, out: Path, args) -> int:
    cfg = resolve(cfg)
    report = theory_report(_problem(cfg))
    doc = report.to_dict()
    doc["provenance"] = _provenance(cfg)
    doc["config"] = cfg
    atomic_write(out / "theory.json", _dump(doc))
    log.info("wrote %s", out / "theory.json")
    return EXIT_OK


def cmd_run(cfg: dict, out: Path, args) -> int:
    """One replication of the first grid cell, with its endpoints and audit."""
    ec = ExperimentConfig.from_dict(cfg)
    problem = ec.validate()
    est, n, gamma = ec.cells()[0]
    theta0 = resolve_point(ec.theta0, problem.theta_star)
    resolved = resolve(cfg, need=("problem", "grid"))
    stride = int(resolved["output"]["record_stride"])
    rep = int(resolved["output"]["run_replication"])
    seed = cell_seed(ec.master_seed, 0)
    gammas = [gamma] if est == "PR" else [gamma, 2 * gamma]
    res = run_batch(problem, theta0, gammas, n, seed, [rep], record_stride=stride)
    div = res["diverged"][0]
    if (div >= 0).any():
        raise DivergenceError(int(div[div >= 0].min()))
    doc = {"estimator": est, "n": n, "gamma": gamma, "stream_key": [seed, rep],
           "theta_star": problem.theta_star.tolist(), "chains": []}
    for c, g in enumerate(gammas):
        run = ChainRun(g, n, res["tail"][0, c], res["first"][0, c], res["last"][0, c],
                       theta0, (seed, rep), 0, stride,
                       res["path"][0, c] if stride else None)
        item = {"gamma": g, "tail_average": run.tail_average.tolist(),
                "theta_at_n_plus_1": run.theta_at_n_plus_1.tolist(),
                "theta_at_2n": run.theta_at_2n.tolist()}
        if stride == 1:
            item["decomposition_residual"] = decomposition_audit(problem, run)
        doc["chains"].append(item)
        if stride:
            lines = ["k," + ",".join(f"theta_{i}" for i in range(problem.dim))]
            lines += [f"{j * stride}," + ",".join(fmt(v) for v in row)
                      for j, row in enumerate(run.recorded_path)]
            atomic_write(out / f"path_{c}.csv", "\n".join(lines) + "\n")
    if est == "RR":
        doc["rr_estimate"] = (2 * res["tail"][0, 0] - res["tail"][0, 1]).tolist()
    doc["provenance"] = _provenance(resolved)
    atomic_write(out / "run.json", _dump(doc))
    return EXIT_OK


def cmd_diagnose(cfg: dict, out: Path, args) -> int:
    cfg = resolve(cfg, need=("problem", "diagnostics"))
    problem = _problem(cfg)
    d = cfg["diagnostics"]
    gamma = float(d["gamma"])
    ta = resolve_point(d["theta_a"], problem.theta_star)
    tb = resolve_point(d["theta_b"], problem.theta_star)
    curve = coupling_contraction_curve(problem, gamma, ta, tb, int(d["max_k"]),
                                       int(d["replications"]), int(d["seed"]))
    stats = []
    for g in d.get("stationary_gammas") or [gamma]:
        stats.append(stationary_statistics(problem, float(g), int(d["p"]), d.get("burn_in"),
                                           int(d["samples"]), int(d["seed"])))
    # write only after everything succeeded
    atomic_write(out / "decay.csv", curve.to_csv())
    atomic_write(out / "stationary.csv", stationary_table_csv(stats))
    log.info("m_gamma = %d", curve.m_gamma)
    return EXIT_OK


def cmd_experiment(cfg: dict, out: Path, args) -> int:
    ec = ExperimentConfig.from_dict(cfg)
    progress = log.info if args.verbose else None
    result = run_experiment(ec, workers=args.workers, progress=progress)
    # echo the full resolved config so the run can be reproduced from result.json
    result.config = resolve(cfg, need=("problem", "grid"))
    atomic_write(out / "results.csv", result.to_csv())
    atomic_write(out / "result.json", result.to_json())
    bad = [r for r in result.rows if not r.valid]
    if bad:
        for r in bad:
            print(f"invalid row: {r.estimator} n={r.n} gamma={r.gamma:.4g} p={r.p} "
                  f"({r.divergences} divergent replications)", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_fit(cfg: dict, out: Path, args) -> int:
    """Recompute rate fits from ``<out>/result.json``."""
    ec = ExperimentConfig.from_dict(cfg)
    path = out / "result.json"
    try:
        result = ExperimentResult.from_dict(json.loads(path.read_text()))
    except (OSError, ValueError, KeyError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    fits = {k: (v.to_dict() if v else None) for k, v in result.rate_fits.items()}
    notes = dict(result.fit_notes)
    for est in ec.estimators:
        rule = ec.gamma_rule[est]
        if rule.rule != "power":
            continue
        name = f"{est.lower()}_second_order"
        try:
            fits[name] = second_order_residual(result, est, rule).to_dict()
            notes.pop(name, None)
        except (DegenerateFitError, ValueError) as exc:
            fits[name] = None
            notes[name] = str(exc)
    atomic_write(out / "fits.json", _dump({"rate_fits": fits, "fit_notes": notes}))
    return EXIT_OK


COMMANDS = {
    "theory": (cmd_theory, "closed-form quantities at the optimum -> theory.json"),
    "run": (cmd_run, "a single run of the first grid cell -> run.json"),
    "diagnose": (cmd_diagnose, "coupling decay and stationary moments -> decay.csv, "
                               "stationary.csv"),
    "experiment": (cmd_experiment, "Monte-Carlo grid -> results.csv, result.json"),
    "fit": (cmd_fit, "rate fits from an existing result.json -> fits.json"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rrsgd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", required=True, help="TOML (or JSON) experiment config")
        p.add_argument("--out", default="./out", help="output directory (default ./out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       dest="overrides", help="override a config key, e.g. grid.replications=100")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes (default: all CPUs)")
        p.add_argument("--verbose", "-v", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(args.verbose, 2)],
                        format="%(levelname)s: %(message)s")
    if args.workers is not None and args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    func = COMMANDS[args.command][0]
    try:
        cfg = apply_overrides(load(args.config), args.overrides)
        return func(cfg, Path(args.out), args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CapabilityError as exc:
        print(f"capability error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
