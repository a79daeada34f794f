"""Command-line entry point.

Subcommands::

    matchopt solve COST_CSV --eta-inverse 0.01 --out DIR
    matchopt experiment CONFIG.toml --out DIR [--reps R] [--workers K] [--seed S]
    matchopt heatmap PLAN_CSV --out LONG.csv [--svg PLAN.svg]
    matchopt calibrate --gamma 0.06

Exit codes: 0 success, 2 malformed input or config, 3 a solve did not
converge (outputs are still written and flag it).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import re
import sys
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from ._errors import InvalidInputError, NumericalError
from .bvn import bvn_decompose, sample_assignment
from .cost_model import GAMMA_GRID, EstimatorConfig, calibrate_logistic
from .experiments import (
    ExperimentConfig,
    WelfareSummary,
    random_matching_welfare,
    run_feasible_sweep,
    run_oracle_sweep,
    solve_plan,
)
from .ot_core import DEFAULT_MAX_ITER, DEFAULT_TOL, CostMatrix, dual_objective, kl_divergence, primal_objective
from .regret import lemma1_audit
from .rng import PRNG_ID
from .tables import (
    atomic_write_text,
    heatmap_svg,
    read_coupling,
    read_matrix,
    write_coupling_long,
    write_csv,
    write_matrix,
    write_records,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("matchopt")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NOT_CONVERGED = 3
WORKERS_ENV = "MATCHOPT_WORKERS"
CONFIG_DIR = Path(__file__).parent / "configs"


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.ndarray):
        return _json_safe(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(_json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


# ---------------------------------------------------------------- solve

def cmd_solve(args: argparse.Namespace) -> int:
    raw = read_matrix(args.cost_csv)
    values = raw
    if args.normalize:
        lo, hi = raw.min(), raw.max()
        values = (raw - lo) / (hi - lo) if hi > lo else np.zeros_like(raw)
    c_bar = args.c_bar
    if values.min() < 0 or values.max() > c_bar:
        raise InvalidInputError(
            f"{args.cost_csv}: costs must lie in [0, {c_bar}] (found [{values.min():.6g}, {values.max():.6g}]); "
            "pass --normalize or a larger --c-bar"
        )
    if args.eta_inverse < 0 or not math.isfinite(args.eta_inverse):
        raise InvalidInputError("--eta-inverse must be a finite value >= 0")
    cost = CostMatrix(values, c_bar=c_bar)
    n = cost.n
    out = Path(args.out)

    plan = solve_plan(cost, args.eta_inverse, args.tol, args.max_iter)
    mass = plan.coupling.mass
    summary = {
        "n": n,
        "eta_inverse": args.eta_inverse,
        "eta": plan.eta,
        "c_bar": c_bar,
        "normalized": bool(args.normalize),
        "converged": plan.converged,
        "welfare": float(np.sum(mass * values)),
        "random_welfare": random_matching_welfare(values),
        "kl": kl_divergence(mass),
        "seed": args.seed,
    }
    if args.normalize:
        summary["welfare_input_scale"] = float(np.sum(mass * raw))
    if plan.report is not None:
        pot = plan.potentials
        primal = primal_objective(mass, values, plan.eta)
        dual = dual_objective(values, pot)
        audit = lemma1_audit(pot, mass, c_bar, c=values)
        summary.update(
            iterations=plan.report.iterations,
            newton_steps=plan.report.newton_steps,
            marginal_residual=plan.report.final_marginal_residual,
            primal_objective=primal,
            dual_objective=dual,
            duality_gap=abs(primal - dual),
            relative_duality_gap=abs(primal - dual) / max(abs(primal), abs(dual), 1e-300),
            lemma1={**audit.__dict__, "holds": audit.holds()},
        )
        write_csv(out / "potentials.csv", ["index", "f", "g"],
                  ([i, float(pot.f[i]), float(pot.g[i])] for i in range(n)))
    else:
        summary.update(assignment=plan.assignment.sigma.tolist(), iterations=0, marginal_residual=0.0)
    write_matrix(out / "coupling.csv", mass)

    try:
        mix = bvn_decompose(mass)
        rows = [
            [k, float(w), i, int(sigma[i])]
            for k, (w, sigma) in enumerate(mix.components)
            for i in range(n)
        ]
        write_csv(out / "mixture.csv", ["component", "weight", "x_index", "w_index"], rows)
        summary["bvn"] = {
            "components": len(mix),
            "max_reconstruction_error": float(np.abs(mix.doubly_stochastic() - n * mass).max()),
            "sampled_assignment": sample_assignment(mix, args.seed).tolist(),
        }
    except NumericalError as exc:
        summary["bvn"] = {"error": str(exc)}
    write_json(out / "summary.json", summary)
    if not plan.converged:
        logger.error("solver did not converge; outputs written with converged=false")
        return EXIT_NOT_CONVERGED
    return EXIT_OK


# ---------------------------------------------------------------- config

CONFIG_KEYS = {
    "dgp": str,
    "gamma": (float, list),
    "market_size": int,
    "eta_inverse": list,
    "training_sizes": list,
    "repetitions": int,
    "base_seed": int,
    "mc_draws": int,
    "tol": float,
    "max_iter": int,
    "workers": int,
    "oracle_only": bool,
    "oracle_injection": bool,
    "estimator": dict,
}
ESTIMATOR_KEYS = {
    "kind": str,
    "n_rounds": int,
    "learning_rate": float,
    "max_depth": int,
    "min_leaf": int,
    "max_bins": int,
    "n_bins": int,
}


class ConfigError(InvalidInputError):
    pass


def _key_line(text: str, key: str, table: str | None = None) -> int:
    """1-based line of ``key = ...`` (inside ``[table]`` if given); 1 if absent."""
    current = None
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        header = re.match(r"^\[\s*([A-Za-z0-9_.-]+)\s*\]", stripped)
        if header:
            current = header.group(1)
            if table is not None and current == table and key == table:
                return number
            continue
        if current == table and re.match(rf"^{re.escape(key)}\s*=", stripped):
            return number
    return 1


def _check_type(value, expected, where: str):
    kinds = expected if isinstance(expected, tuple) else (expected,)
    for kind in kinds:
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return
        if kind is int and isinstance(value, int) and not isinstance(value, bool):
            return
        if kind not in (int, float) and isinstance(value, kind):
            return
    names = " or ".join(k.__name__ for k in kinds)
    raise ValueError(f"{where} must be {names}, got {type(value).__name__} {value!r}")


def parse_config(path) -> tuple[dict, list[ExperimentConfig], dict]:
    """Parse and validate an experiment config.

    Returns the raw table, one :class:`ExperimentConfig` per ``gamma`` (one
    for PAM), and run options (``workers``, ``oracle_only``). Errors carry
    ``path:line:`` prefixes.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        match = re.search(r"line (\d+)", str(exc))
        line = match.group(1) if match else "1"
        raise ConfigError(f"{path}:{line}: invalid TOML: {exc}") from exc

    def fail(key, message, table=None):
        raise ConfigError(f"{path}:{_key_line(text, key, table)}: {message}")

    for key, value in raw.items():
        if key not in CONFIG_KEYS:
            fail(key, f"unknown key {key!r}")
        try:
            _check_type(value, CONFIG_KEYS[key], key)
        except ValueError as exc:
            fail(key, str(exc))
    estimator_raw = raw.get("estimator", {})
    for key, value in estimator_raw.items():
        if key not in ESTIMATOR_KEYS:
            fail(key, f"unknown estimator key {key!r}", "estimator")
        try:
            _check_type(value, ESTIMATOR_KEYS[key], f"estimator.{key}")
        except ValueError as exc:
            fail(key, str(exc), "estimator")
    if "dgp" not in raw:
        raise ConfigError(f"{path}:1: missing required key 'dgp'")
    for key in ("eta_inverse", "training_sizes"):
        for item in raw.get(key, []):
            try:
                _check_type(item, float if key == "eta_inverse" else int, f"{key} entries")
            except ValueError as exc:
                fail(key, str(exc))

    dgp = raw["dgp"]
    if dgp == "logistic":
        gammas = raw.get("gamma", list(GAMMA_GRID))
        gammas = gammas if isinstance(gammas, list) else [gammas]
        if not gammas:
            fail("gamma", "gamma list is empty")
        for g in gammas:
            try:
                _check_type(g, float, "gamma entries")
            except ValueError as exc:
                fail("gamma", str(exc))
    elif "gamma" in raw:
        fail("gamma", "gamma applies only to dgp = 'logistic'")
    else:
        gammas = [None]

    defaults = ExperimentConfig()
    market_default = 200 if dgp == "logistic" else defaults.market_size
    reps_default = 20 if dgp == "logistic" else defaults.repetitions
    configs = []
    for gamma in gammas:
        try:
            estimator = EstimatorConfig(**estimator_raw)
            configs.append(ExperimentConfig(
                dgp_kind=dgp,
                gamma=None if gamma is None else float(gamma),
                market_size=raw.get("market_size", market_default),
                eta_inverse_grid=tuple(raw.get("eta_inverse", defaults.eta_inverse_grid)),
                training_sizes=tuple(raw.get("training_sizes", defaults.training_sizes)),
                repetitions=raw.get("repetitions", reps_default),
                base_seed=raw.get("base_seed", defaults.base_seed),
                mc_draws=raw.get("mc_draws", defaults.mc_draws),
                tol=float(raw.get("tol", defaults.tol)),
                max_iter=raw.get("max_iter", defaults.max_iter),
                estimator=estimator,
                oracle_injection=raw.get("oracle_injection", False),
            ))
            if estimator.kind not in ("gbt", "binned_mean"):
                fail("kind", f"unknown estimator kind {estimator.kind!r}", "estimator")
            if gamma is not None:
                calibrate_logistic(float(gamma))
        except InvalidInputError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}:{_locate_message(text, str(exc))}: {exc}") from exc
    options = {"workers": raw.get("workers"), "oracle_only": raw.get("oracle_only", False)}
    return raw, configs, options


_MESSAGE_KEYS = {
    "dgp_kind": "dgp",
    "eta_inverse_grid": "eta_inverse",
    "market_size": "market_size",
    "repetitions": "repetitions",
    "training_sizes": "training_sizes",
    "mc_draws": "mc_draws",
    "gamma": "gamma",
}


def _locate_message(text: str, message: str) -> int:
    for word, key in _MESSAGE_KEYS.items():
        if word in message:
            return _key_line(text, key)
    return 1


# ---------------------------------------------------------------- experiment

CELL_KEYS = ("policy", "dgp", "gamma", "N", "eta_inverse")


def _plan_file(gamma, eta_inv) -> str:
    tag = "pam" if gamma is None else f"gamma{gamma!r}"
    return f"heatmap_{tag}_etainv{eta_inv!r}.csv"


def run_experiment(configs: list[ExperimentConfig], out: Path, workers: int, oracle_only: bool, raw: dict) -> int:
    started = datetime.now(timezone.utc).isoformat()
    summary_rows, run_rows, cells, studies = [], [], {}, []
    for cfg in configs:
        oracle = run_oracle_sweep(cfg)
        studies.append((cfg, oracle))
        feasible = None if oracle_only else run_feasible_sweep(cfg, workers=workers)
        for policy, result in (("oracle", oracle), ("feasible", feasible)):
            if result is None:
                continue
            base = {"policy": policy, "dgp": cfg.dgp_kind, "gamma": cfg.gamma}
            for row in result.rows:
                summary_rows.append({
                    **base, **row,
                    "random_welfare": result.random_welfare,
                    "oracle_opt_welfare": result.oracle_opt_welfare,
                })
            for run in result.runs:
                run_rows.append({**base, **run})
                key = (policy, cfg.dgp_kind, cfg.gamma, run["N"], run["eta_inverse"])
                cell = cells.setdefault(key, {
                    **dict(zip(CELL_KEYS, key)), "repetitions": [], "n_converged": 0,
                    "n_nonconverged": 0, "max_marginal_residual": 0.0, "max_iterations": 0,
                })
                cell["repetitions"].append(run["repetition"])
                cell["n_converged" if run["converged"] else "n_nonconverged"] += 1
                cell["max_iterations"] = max(cell["max_iterations"], run.get("iterations", 0))
                residual = run.get("marginal_residual")
                if residual is not None:
                    cell["max_marginal_residual"] = max(cell["max_marginal_residual"], residual)
            if policy == "oracle":
                for run in result.runs:
                    plan = result.plans[run["eta_inverse"]]
                    if plan.report is not None:
                        key = (policy, cfg.dgp_kind, cfg.gamma, None, run["eta_inverse"])
                        cells[key]["max_marginal_residual"] = plan.report.final_marginal_residual

    out.mkdir(parents=True, exist_ok=True)
    files = {}
    files["summary.csv"] = write_records(out / "summary.csv", summary_rows, _ordered_columns(summary_rows))
    files["runs.csv"] = write_records(out / "runs.csv", run_rows, _ordered_columns(run_rows))
    _write_plot_data(out, summary_rows)
    for cfg, oracle in studies:
        ctx_market = _market_values(cfg)
        for eta_inv, plan in oracle.plans.items():
            name = _plan_file(cfg.gamma, eta_inv)
            write_coupling_long(out / name, plan.coupling.mass, *ctx_market)
    manifest = {
        "library": "matchopt",
        "version": __version__,
        "prng": PRNG_ID,
        "started_at": started,
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "config": raw,
        "resolved_configs": [cfg.to_dict() for cfg in configs],
        "workers": workers,
        "oracle_only": oracle_only,
        "cells": list(cells.values()),
        "files": {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(out.glob("*.csv"))
        },
    }
    write_json(out / "manifest.json", manifest)
    nonconverged = sum(c["n_nonconverged"] for c in cells.values())
    if nonconverged:
        logger.error("%d solves did not converge; see manifest.json", nonconverged)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _market_values(cfg: ExperimentConfig):
    from .experiments import build_market

    market = build_market(cfg.make_dgp(), cfg.market_size)
    return market.x_values, market.w_values


def _ordered_columns(records: list[dict]) -> list[str]:
    columns = list(CELL_KEYS)
    for rec in records:
        for key in rec:
            if key not in columns:
                columns.append(key)
    return columns


def _write_plot_data(out: Path, summary_rows: list[dict]) -> None:
    """One tidy CSV per figure: relative gain against N, absolute gain by gamma."""
    rel = [
        [r["policy"], r["gamma"], r["eta_inverse"], r["N"], r["rel_gain_mean"], r["rel_gain_std"], r["n_converged"]]
        for r in summary_rows
    ]
    write_csv(out / "plot_relative_gain_vs_N.csv",
              ["policy", "gamma", "eta_inverse", "N", "rel_gain_mean", "rel_gain_std", "n"], rel)
    absolute = [
        [r["policy"], r["gamma"], r["eta_inverse"], r["N"], r["abs_gain_pp_mean"], r["abs_gain_pp_std"],
         r["n_converged"]]
        for r in summary_rows
    ]
    write_csv(out / "plot_absolute_gain_by_gamma.csv",
              ["policy", "gamma", "eta_inverse", "N", "abs_gain_pp_mean", "abs_gain_pp_std", "n"], absolute)


def resolve_workers(flag: int | None, config_value: int | None = None) -> int:
    if flag is not None:
        workers = flag
    elif os.environ.get(WORKERS_ENV):
        try:
            workers = int(os.environ[WORKERS_ENV])
        except ValueError:
            raise InvalidInputError(f"{WORKERS_ENV} must be an integer, got {os.environ[WORKERS_ENV]!r}") from None
    elif config_value is not None:
        workers = config_value
    else:
        workers = 1
    if workers < 1:
        raise InvalidInputError("worker count must be >= 1")
    return workers


def cmd_experiment(args: argparse.Namespace) -> int:
    raw, configs, options = parse_config(args.config)
    overrides = {}
    if args.reps is not None:
        overrides["repetitions"] = args.reps
    if args.seed is not None:
        overrides["base_seed"] = args.seed
    if args.tol is not None:
        overrides["tol"] = args.tol
    if args.max_iter is not None:
        overrides["max_iter"] = args.max_iter
    if args.eta_inverse is not None:
        overrides["eta_inverse_grid"] = tuple(_parse_grid(args.eta_inverse))
    if overrides:
        configs = [replace(cfg, **overrides) for cfg in configs]
        raw = {**raw, "cli_overrides": overrides}
    workers = resolve_workers(args.workers, options["workers"])
    return run_experiment(configs, Path(args.out), workers, options["oracle_only"], raw)


def _parse_grid(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"--eta-inverse must be a comma-separated list of numbers, got {text!r}") from None


# ---------------------------------------------------------------- heatmap / calibrate

def cmd_heatmap(args: argparse.Namespace) -> int:
    coupling = read_coupling(args.plan_csv)
    write_coupling_long(args.out, coupling.mass)
    if args.svg:
        title = args.title if args.title is not None else Path(args.plan_csv).stem
        atomic_write_text(args.svg, heatmap_svg(coupling.mass, title=title))
    return EXIT_OK


def cmd_calibrate(args: argparse.Namespace) -> int:
    gammas = args.gamma or list(GAMMA_GRID)
    out = []
    for gamma in gammas:
        dgp = calibrate_logistic(gamma)
        out.append({**dgp.describe(), "anchor_residuals": dgp.anchor_residuals().tolist()})
    print(json.dumps(out if len(out) > 1 else out[0], indent=2))
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="matchopt", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"matchopt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one cost matrix")
    p.add_argument("cost_csv")
    p.add_argument("--eta-inverse", type=float, default=0.0, help="1/eta; 0 solves the exact assignment")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--seed", type=int, default=0, help="seed for the sampled assignment")
    p.add_argument("--c-bar", type=float, default=1.0, help="upper bound on costs")
    p.add_argument("--normalize", action="store_true", help="rescale costs to [0, 1] first")
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="run a simulation study from a TOML config")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--reps", type=int)
    p.add_argument("--workers", type=int, help=f"process count (fallback: ${WORKERS_ENV}, then 1)")
    p.add_argument("--seed", type=int, help="override base_seed")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--eta-inverse", help="comma-separated 1/eta grid overriding the config")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("heatmap", help="long-format CSV and optional SVG of a coupling")
    p.add_argument("plan_csv")
    p.add_argument("--out", required=True)
    p.add_argument("--svg")
    p.add_argument("--title")
    p.set_defaults(func=cmd_heatmap)

    p = sub.add_parser("calibrate", help="print logistic coefficients for each gamma")
    p.add_argument("--gamma", type=float, action="append")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
