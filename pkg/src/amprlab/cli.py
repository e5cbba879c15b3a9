"""Command-line harness.

Configuration is layered: built-in defaults, then a flat ``key = value``
file (``--config``), then ``AMPRLAB_<KEY>`` environment variables, then
``key=value`` arguments on the command line.  ``--seed`` and ``--threads``
are shorthands for the ``seed`` and ``threads`` keys.

Outputs go to ``--out`` (a directory).  Floats are written with 17
significant digits; infinite values are written as ``inf``.  Exit codes:
0 success (non-convergence is only flagged), 2 usage or config error,
3 solver divergence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .ampr import SolverOptions, run_ampr, unbiased_estimate
from .diagnostics import fit_line, qq_against_normal
from .errors import DivergenceError, InfeasibleDomain, InvalidArgument
from .gamp import gamp_unbiased_estimate, run_gamp
from .hyperopt import (SWEEP_COLUMNS, NelderMeadOptions, OptDomain, SweepRecord,
                       minimize_variance, sweep_cells)
from .pipelines import bootstrap_ensemble
from .scalar_kernels import DenoiserParams
from .state_evolution import TRAJECTORY_COLUMNS, SeInit, SeOptions, run_se, se_variance
from .synthetic_data import SignalPrior, sample_bootstrap_weights, sample_instance
from .writers import write_csv, write_json

SCHEMA_VERSION = 1
ENV_PREFIX = "AMPRLAB_"
EXIT_OK, EXIT_USAGE, EXIT_DIVERGED = 0, 2, 3


class ConfigError(Exception):
    pass


# --------------------------------------------------------------------------
# config parsing

def parse_float(text: str) -> float:
    value = float(text)
    if math.isnan(value):
        raise ValueError("nan is not allowed")
    return value


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_grid(text: str) -> list[float]:
    """``lo:hi:count`` (inclusive linspace) or a comma-separated list."""
    text = text.strip()
    if ":" in text:
        lo, hi, count = text.split(":")
        count = int(count)
        if count < 1:
            raise ValueError("grid count must be >= 1")
        return [float(v) for v in np.linspace(float(lo), float(hi), count)]
    values = [float(v) for v in text.split(",") if v.strip()]
    if not values:
        raise ValueError("empty grid")
    return values


def parse_gamma_mode(text: str):
    return None if text.strip().lower() == "free" else parse_float(text)


@dataclass(frozen=True)
class Key:
    parse: object
    default: object = None
    required: bool = False


MODEL = {
    "n": Key(int, required=True),
    "alpha": Key(parse_float, required=True),
    "delta": Key(parse_float, required=True),
    "rho": Key(parse_float, required=True),
    "lambda": Key(parse_float, required=True),
    "gamma": Key(parse_float, required=True),
    "seed": Key(int, 0),
}
SOLVER = {
    "tol": Key(parse_float, 1e-8),
    "max_iters": Key(int, 1000),
    "damping": Key(parse_float, 0.0),
    "init_qhat": Key(parse_float, 1.0),
    "init_vhat": Key(parse_float, 1.0),
    "stall_window": Key(int, 50),
}
SE = {
    "se_tol": Key(parse_float, 1e-10),
    "se_max_iters": Key(int, 5000),
    "se_damping": Key(parse_float, 0.5),
    "quadrature_nodes": Key(int, 120),
    "se_method": Key(str, "closed_form"),
}
OPT = {
    "restarts": Key(int, 5),
    "mu_b_min": Key(parse_float, 1e-2),
    "mu_b_max": Key(parse_float, math.inf),
    "mu_b_finite_cap": Key(parse_float, 1e2),
    "lambda_max": Key(parse_float, 10.0),
    "gamma_mode": Key(parse_gamma_mode, 1.0),
    "nm_xtol": Key(parse_float, 1e-6),
    "nm_max_iters": Key(int, 500),
}
THREADS = {"threads": Key(int, 1)}

COMMAND_KEYS = {
    "run-ampr": {**MODEL, **SOLVER, **THREADS, "mu_b": Key(parse_float, required=True),
                 "write_coords": Key(parse_bool, False)},
    "run-gamp": {**MODEL, **SOLVER, **THREADS, "mu_b": Key(parse_float, math.inf),
                 "write_coords": Key(parse_bool, False)},
    "run-se": {**{k: MODEL[k] for k in ("alpha", "delta", "rho", "lambda", "gamma", "seed")},
               **SE, **THREADS, "mu_b": Key(parse_float, required=True),
               "init_mse": Key(parse_float, None), "init_qhat": Key(parse_float, 1.0),
               "init_vhat": Key(parse_float, 1.0)},
    "qq": {**MODEL, **SOLVER, **THREADS, "mu_b": Key(parse_float, required=True),
           "k": Key(int, 2048), "batch_size": Key(int, 256)},
    "optimize": {**{k: MODEL[k] for k in ("alpha", "delta", "rho", "seed")},
                 **SE, **OPT, **THREADS},
    "sweep": {"rho_grid": Key(parse_grid, required=True),
              "alpha_grid": Key(parse_grid, required=True),
              "delta": Key(parse_float, required=True), "seed": Key(int, 0),
              **SE, **OPT, **THREADS},
}


def read_config_file(path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key] = value
    return out


def resolve_config(command: str, file_values: dict, env: dict, overrides: dict) -> dict:
    keys = COMMAND_KEYS[command]
    raw = dict(file_values)
    for key in keys:
        env_value = env.get(ENV_PREFIX + key.upper())
        if env_value is not None:
            raw[key] = env_value
    raw.update(overrides)
    unknown = sorted(set(raw) - set(keys))
    if unknown:
        raise ConfigError(f"unknown key(s) for {command}: {', '.join(unknown)}")
    cfg = {}
    for key, key_def in keys.items():
        if key in raw:
            try:
                cfg[key] = key_def.parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw[key]!r} ({exc})") from None
        elif key_def.required:
            raise ConfigError(f"missing required key: {key}")
        else:
            cfg[key] = key_def.default
    return cfg


def _params(cfg) -> DenoiserParams:
    return DenoiserParams(cfg["lambda"], cfg["gamma"])


def _solver_opts(cfg) -> SolverOptions:
    return SolverOptions(cfg["max_iters"], cfg["tol"], cfg["damping"],
                         cfg["init_qhat"], cfg["init_vhat"], stall_window=cfg["stall_window"])


def _se_opts(cfg, record=False) -> SeOptions:
    return SeOptions(cfg["se_max_iters"], cfg["se_tol"], cfg["quadrature_nodes"],
                     cfg["se_damping"], cfg["se_method"], record)


def _domain(cfg) -> OptDomain:
    return OptDomain((cfg["mu_b_min"], cfg["mu_b_max"]), (1e-7, cfg["lambda_max"]),
                     cfg["gamma_mode"], cfg["mu_b_finite_cap"])


def _nm_opts(cfg) -> NelderMeadOptions:
    return NelderMeadOptions(xtol=cfg["nm_xtol"], max_iters=cfg["nm_max_iters"])


def _instance(cfg):
    return sample_instance(cfg["n"], cfg["alpha"], cfg["delta"], SignalPrior(cfg["rho"]),
                           cfg["seed"])


def _summary(command, cfg, **fields):
    return {"schema_version": SCHEMA_VERSION, "command": command, "config": cfg, **fields}


# --------------------------------------------------------------------------
# commands

def cmd_run_ampr(cfg, out: Path) -> int:
    inst = _instance(cfg)
    state = run_ampr(inst, _params(cfg), cfg["mu_b"], _solver_opts(cfg))
    est = unbiased_estimate(state, inst.alpha)
    write_json(out / "summary.json", _summary(
        "run-ampr", cfg, qhat=state.qhat, vhat=state.vhat, chi=state.chi, v=state.v,
        sigma2=est.sigma2, vhat_over_qhat2=est.vhat_over_qhat2,
        mse=float(np.mean((state.w_hat - inst.w0) ** 2)),
        iterations=state.iter, converged=state.converged))
    if cfg["write_coords"]:
        write_csv(out / "coords.csv", ("w0", "r_hat", "w_hat"),
                  zip(inst.w0, est.r_hat, state.w_hat))
    return EXIT_OK


def cmd_run_gamp(cfg, out: Path) -> int:
    inst = _instance(cfg)
    weights = None
    if math.isfinite(cfg["mu_b"]):
        weights = sample_bootstrap_weights(inst.m, cfg["mu_b"], [cfg["seed"], 1, 0]).ratios
    state = run_gamp(inst, _params(cfg), weights, _solver_opts(cfg))
    est = gamp_unbiased_estimate(state, inst.alpha)
    write_json(out / "summary.json", _summary(
        "run-gamp", cfg, qhat=state.qhat, chi=state.chi, sigma2=est.sigma2,
        mse=float(np.mean((state.w_hat - inst.w0) ** 2)),
        iterations=state.iter, converged=state.converged))
    if cfg["write_coords"]:
        write_csv(out / "coords.csv", ("w0", "r_hat", "w_hat"),
                  zip(inst.w0, est.r_hat, state.w_hat))
    return EXIT_OK


def cmd_run_se(cfg, out: Path) -> int:
    prior = SignalPrior(cfg["rho"])
    mse0 = prior.second_moment if cfg["init_mse"] is None else cfg["init_mse"]
    init = SeInit(mse0, cfg["init_qhat"], cfg["init_vhat"])
    state = run_se(cfg["alpha"], cfg["delta"], prior, _params(cfg), cfg["mu_b"], init,
                   _se_opts(cfg, record=True))
    write_csv(out / "trajectory.csv", TRAJECTORY_COLUMNS, state.trajectory)
    write_json(out / "summary.json", _summary(
        "run-se", cfg, mse=state.mse, chi=state.chi, v=state.v, qhat=state.qhat,
        chihat=state.chihat, vhat=state.vhat, sigma2=se_variance(state),
        iterations=state.iter, converged=state.converged))
    return EXIT_OK


def cmd_qq(cfg, out: Path) -> int:
    if cfg["k"] < 1:
        raise ConfigError("k must be >= 1")
    inst = _instance(cfg)
    params, opts = _params(cfg), _solver_opts(cfg)
    state = run_ampr(inst, params, cfg["mu_b"], opts)
    est = unbiased_estimate(state, inst.alpha)
    ens = bootstrap_ensemble(inst, params, cfg["mu_b"], cfg["k"], cfg["seed"], opts,
                             cfg["batch_size"], cfg["threads"])
    variance = est.vhat_over_qhat2
    residual = est.r_hat - ens.first_r
    qq = qq_against_normal(residual, variance)
    write_csv(out / "qq.csv", ("theoretical", "sample"), zip(qq.theoretical, qq.sample))
    write_json(out / "qq.json", _summary(
        "qq", cfg, slope=qq.slope, intercept=qq.intercept, ks_statistic=qq.ks_statistic,
        variance=variance, residual_variance=float(np.var(residual)),
        ampr_converged=state.converged))
    fit = fit_line(ens.mean_r, est.r_hat)
    write_csv(out / "scatter.csv", ("r_hat", "mean_r_gamp"), zip(est.r_hat, ens.mean_r))
    write_json(out / "scatter.json", _summary(
        "qq", cfg, slope=fit.slope, intercept=fit.intercept, realizations=ens.count,
        gamp_converged=ens.converged, gamp_max_iters=ens.max_iters))
    return EXIT_OK


def _optimum_fields(opt):
    def pack(o):
        return {"mu_b": o.mu_b, "lambda": o.lam, "gamma": o.gamma, "sigma2": o.sigma2,
                "converged": o.converged}
    return {"best": pack(opt.best), "baseline": pack(opt.baseline),
            "starts": [pack(s) if s is not None else None for s in opt.starts]}


def cmd_optimize(cfg, out: Path) -> int:
    prior = SignalPrior(cfg["rho"])
    opt = minimize_variance(cfg["alpha"], cfg["delta"], prior, _domain(cfg), cfg["restarts"],
                            _se_opts(cfg), _nm_opts(cfg))
    rec = SweepRecord.from_optimum(cfg["rho"], cfg["alpha"], opt)
    write_json(out / "optimum.json", _summary(
        "optimize", cfg, record=_record_dict(rec), **_optimum_fields(opt)))
    return EXIT_OK


def _record_dict(rec: SweepRecord) -> dict:
    return {c: getattr(rec, c) for c in SWEEP_COLUMNS}


def cmd_sweep(cfg, out: Path) -> int:
    rows = []
    for rec, _ in sweep_cells(cfg["rho_grid"], cfg["alpha_grid"], cfg["delta"], _domain(cfg),
                              cfg["restarts"], _se_opts(cfg), _nm_opts(cfg), cfg["threads"]):
        rows.append([getattr(rec, c) for c in SWEEP_COLUMNS])
    write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows)
    return EXIT_OK


COMMANDS = {
    "run-ampr": cmd_run_ampr,
    "run-gamp": cmd_run_gamp,
    "run-se": cmd_run_se,
    "qq": cmd_qq,
    "optimize": cmd_optimize,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="amprlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"amprlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"{name} (keys: {', '.join(COMMAND_KEYS[name])})")
        p.add_argument("--config", type=Path, help="flat key = value file")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        file_values = read_config_file(args.config) if args.config else {}
        overrides = _parse_overrides(args.overrides)
        if args.seed is not None:
            overrides["seed"] = str(args.seed)
        if args.threads is not None:
            overrides["threads"] = str(args.threads)
        cfg = resolve_config(args.command, file_values, os.environ, overrides)
    except (ConfigError, OSError) as exc:
        parser.error(str(exc))
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out)
    except (ConfigError, InvalidArgument) as exc:
        print(f"amprlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        st = exc.state
        info = {k: getattr(st, k) for k in ("qhat", "vhat", "chi", "v", "iter", "mse", "chihat")
                if st is not None and hasattr(st, k) and np.ndim(getattr(st, k)) == 0}
        write_json(out / "error.json", _summary(args.command, cfg, error="diverged",
                                                message=str(exc), last_state=info))
        print(f"amprlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleDomain as exc:
        write_json(out / "error.json", _summary(args.command, cfg, error="infeasible",
                                                message=str(exc)))
        print(f"amprlab {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
