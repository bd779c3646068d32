"""Experiment configuration: loading, overrides, defaults and validation.

A configuration is a TOML file with the sections ``[problem]``,
``[estimator]``, ``[grid]``, ``[diagnostics]`` and ``[output]`` (see the
README for every key).  A JSON file with the same structure, or a
``result.json`` whose ``config`` entry holds it, is accepted too.
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .problems import KINDS

ESTIMATORS = ("PR", "RR")

SCHEMA = {
    "problem": {"kind", "dim", "hessian", "theta_star", "center", "eps", "shift",
                "noise_cov", "noise_sd", "covariate_cov", "label_sd"},
    "estimator": {"estimators", "theta0", "p_moments", "bias_estimator"},
    "grid": {"n", "gamma_rule", "horizon", "replications", "master_seed", "block_size"},
    "diagnostics": {"gamma", "theta_a", "theta_b", "max_k", "replications", "seed",
                    "stationary_gammas", "p", "samples", "burn_in"},
    "output": {"record_stride", "run_replication"},
}

DEFAULTS = {
    "estimator": {"estimators": ["PR", "RR"], "theta0": "offset(1)", "p_moments": [2],
                  "bias_estimator": "control_variate"},
    "grid": {"replications": 1000, "master_seed": 0, "block_size": 1000},
    "diagnostics": {"max_k": 200, "replications": 1000, "seed": 0, "p": 2,
                    "samples": 1000000, "theta_a": "offset(1)", "theta_b": "offset(-1)"},
    "output": {"record_stride": 0, "run_replication": 0},
}

_OFFSET = re.compile(r"^offset\(\s*([-+0-9.eE]+)\s*\)$")


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = [errors] if isinstance(errors, str) else list(errors)
        super().__init__("; ".join(self.errors))


def load(path) -> dict:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        if path.suffix.lower() == ".json":
            data = json.loads(raw.decode())
            if "config" in data and "problem" not in data:
                data = data["config"]
        else:
            data = tomllib.loads(raw.decode())
    except (ValueError, UnicodeDecodeError) as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a table of sections")
    return data


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key[.subkey]=value`` strings; values are parsed as TOML."""
    cfg = copy.deepcopy(cfg)
    errors = []
    for item in overrides or ():
        if "=" not in item:
            errors.append(f"override {item!r} is not KEY=VALUE")
            continue
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        if len(parts) < 2 or parts[0] not in SCHEMA or parts[1] not in SCHEMA[parts[0]]:
            errors.append(f"override {key!r} does not name a config key")
            continue
        node = cfg.setdefault(parts[0], {})
        for p in parts[1:-1]:
            nxt = node.get(p)
            if not isinstance(nxt, dict):
                nxt = node[p] = {}
            node = nxt
        node[parts[-1]] = _parse_value(text.strip())
    if errors:
        raise ConfigError(errors)
    return cfg


def resolve(cfg: dict, need=("problem",)) -> dict:
    """Fill defaults and validate; raises :class:`ConfigError` listing all errors."""
    errors = []
    out = {}
    for sec, keys in cfg.items():
        if sec not in SCHEMA:
            errors.append(f"unknown section [{sec}]")
            continue
        if not isinstance(keys, dict):
            errors.append(f"[{sec}] must be a table")
            continue
        bad = sorted(set(keys) - SCHEMA[sec])
        if bad:
            errors.append(f"unknown key(s) in [{sec}]: {', '.join(bad)}")
        out[sec] = copy.deepcopy(keys)
    for sec, d in DEFAULTS.items():
        merged = copy.deepcopy(d)
        merged.update(out.get(sec, {}))
        out[sec] = merged
    for sec in need:
        if sec not in cfg:
            errors.append(f"missing section [{sec}]")
    if "problem" in cfg:
        errors += _check_problem(out["problem"])
    errors += _check_estimator(out["estimator"])
    if "grid" in need or "grid" in cfg:
        errors += _check_grid(out["grid"], out["estimator"].get("estimators", []))
    if "diagnostics" in need:
        errors += _check_diagnostics(out["diagnostics"])
    if errors:
        raise ConfigError(errors)
    return out


def _check_problem(p: dict) -> list:
    e = []
    if p.get("kind") not in KINDS:
        e.append(f"problem.kind must be one of {', '.join(KINDS)}")
    if "dim" in p and (not isinstance(p["dim"], int) or p["dim"] < 1):
        e.append("problem.dim must be a positive integer")
    return e


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_estimator(s: dict) -> list:
    e = []
    est = s.get("estimators")
    if not isinstance(est, list) or not est or any(x not in ESTIMATORS for x in est) \
            or len(set(est)) != len(est):
        e.append("estimator.estimators must be a non-empty subset of ['PR', 'RR']")
    pm = s.get("p_moments")
    if not isinstance(pm, list) or not pm or any(not _is_int(p) or p <= 0 or p % 2 for p in pm):
        e.append("estimator.p_moments must be a list of positive even integers")
    if s.get("bias_estimator") not in ("mean", "control_variate"):
        e.append("estimator.bias_estimator must be 'mean' or 'control_variate'")
    e += _check_point(s.get("theta0"), "estimator.theta0")
    return e


def _check_point(v, name) -> list:
    if isinstance(v, str):
        if v == "at_optimum" or _OFFSET.match(v):
            return []
        return [f"{name} must be a vector, 'at_optimum' or 'offset(r)'"]
    if isinstance(v, list) and v and all(isinstance(x, (int, float)) for x in v):
        return []
    return [f"{name} must be a vector, 'at_optimum' or 'offset(r)'"]


def _check_rule(r, name) -> list:
    if not isinstance(r, dict):
        return [f"{name} must be a table"]
    kind = r.get("rule")
    if kind == "power":
        e = []
        a, b = r.get("a", 1.0), r.get("beta")
        if not isinstance(a, (int, float)) or not a > 0:
            e.append(f"{name}.a must be positive")
        if not isinstance(b, (int, float)) or not 0 < b < 1:
            e.append(f"{name}.beta must lie in (0, 1)")
        return e
    if kind == "list":
        g = r.get("gammas")
        if not isinstance(g, list) or not g or any(
                not isinstance(x, (int, float)) or not x > 0 for x in g):
            return [f"{name}.gammas must be a non-empty list of positive step sizes"]
        return []
    return [f"{name}.rule must be 'power' or 'list'"]


def _check_grid(g: dict, estimators) -> list:
    e = []
    rule = g.get("gamma_rule")
    if rule is None:
        e.append("grid.gamma_rule is required")
    elif isinstance(rule, dict) and "rule" in rule:
        e += _check_rule(rule, "grid.gamma_rule")
    elif isinstance(rule, dict):
        for est in estimators:
            if est not in rule:
                e.append(f"grid.gamma_rule has no rule for {est}")
            else:
                e += _check_rule(rule[est], f"grid.gamma_rule.{est}")
        extra = sorted(set(rule) - set(ESTIMATORS))
        if extra:
            e.append(f"grid.gamma_rule has unknown estimator(s) {extra}")
    else:
        e.append("grid.gamma_rule must be a table")
    n = g.get("n")
    horizon = g.get("horizon")
    if horizon is not None:
        if n is not None:
            e.append("grid.n and grid.horizon are mutually exclusive")
        if not isinstance(horizon, (int, float)) or not horizon > 0:
            e.append("grid.horizon must be positive")
    elif not isinstance(n, list) or not n or any(not _is_int(x) or x < 1 for x in n):
        e.append("grid.n must be a non-empty list of positive integers")
    if not _is_int(g.get("replications")) or g["replications"] < 2:
        e.append("grid.replications must be an integer >= 2")
    if not _is_int(g.get("master_seed")) or not 0 <= g["master_seed"] < 2 ** 64:
        e.append("grid.master_seed must be a 64-bit unsigned integer")
    if not _is_int(g.get("block_size")) or g["block_size"] < 1:
        e.append("grid.block_size must be a positive integer")
    return e


def _check_diagnostics(d: dict) -> list:
    e = []
    if not isinstance(d.get("gamma"), (int, float)) or not d["gamma"] > 0:
        e.append("diagnostics.gamma must be positive")
    for k in ("max_k", "replications", "samples"):
        if not _is_int(d.get(k)) or d[k] < 1:
            e.append(f"diagnostics.{k} must be a positive integer")
    sg = d.get("stationary_gammas", [])
    if not isinstance(sg, list) or any(not isinstance(x, (int, float)) or not x > 0 for x in sg):
        e.append("diagnostics.stationary_gammas must be a list of positive step sizes")
    p = d.get("p")
    if not _is_int(p) or p <= 0 or p % 2:
        e.append("diagnostics.p must be a positive even integer")
    e += _check_point(d.get("theta_a"), "diagnostics.theta_a")
    e += _check_point(d.get("theta_b"), "diagnostics.theta_b")
    return e


def resolve_point(spec, theta_star):
    """``'at_optimum'``, ``'offset(r)'`` (theta* + r u with u = 1/sqrt(d)) or a vector."""
    ts = np.asarray(theta_star, dtype=np.float64)
    if isinstance(spec, str):
        if spec == "at_optimum":
            return ts.copy()
        m = _OFFSET.match(spec)
        if not m:
            raise ConfigError(f"bad point specification {spec!r}")
        r = float(m.group(1))
        return ts + r / math.sqrt(len(ts))
    v = np.asarray(spec, dtype=np.float64)
    if v.shape != ts.shape:
        raise ConfigError(f"point has dimension {v.size}, expected {ts.size}")
    return v


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
