"""Simulation studies: oracle and feasible (estimated-cost) matching policies.

A study fixes a data-generating process and a market of ``n`` job seekers
and ``n`` caseworkers placed at mid-quantiles of their distributions. Oracle
policies are solved on the true cost for each value of the regularization
``1/eta`` (``0`` meaning the exact assignment). Feasible policies repeat
*sample -> fit -> solve* for every training size ``N`` and repetition, and
are evaluated under the true cost.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ._errors import InvalidInputError
from .assignment import Assignment, hungarian_solve
from .cost_model import (
    EstimatorConfig,
    LogisticDgp,
    PamDgp,
    TrueCost,
    calibrate_logistic,
    estimator_error,
    fit_cost_estimator,
    generate_training_sample,
)
from .ot_core import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    TOL_GAP,
    CostMatrix,
    Coupling,
    DualPotentials,
    MarketProfiles,
    SinkhornReport,
    kl_divergence,
    sinkhorn_solve,
)
from .regret import (
    compute_regret,
    empirical_error_norms,
    empirical_theorem_bound,
    lemma1_audit,
    plan_welfare,
    prop1_bounds_check,
    regularization_bias_bound,
    theorem_bound,
)
from .rng import derive_key

logger = logging.getLogger(__name__)

C_BAR = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    dgp_kind: str = "pam"
    gamma: float | None = None
    market_size: int = 100
    eta_inverse_grid: tuple[float, ...] = (0.0, 0.002, 0.01, 0.05)
    training_sizes: tuple[int, ...] = (500, 5_000, 50_000, 500_000)
    repetitions: int = 30
    base_seed: int = 0
    mc_draws: int = 20_000
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    oracle_injection: bool = False

    def __post_init__(self):
        if self.dgp_kind not in ("pam", "logistic"):
            raise InvalidInputError(f"dgp_kind must be 'pam' or 'logistic', got {self.dgp_kind!r}")
        if self.dgp_kind == "logistic" and self.gamma is None:
            raise InvalidInputError("logistic studies need gamma")
        if self.market_size < 2:
            raise InvalidInputError("market_size must be >= 2")
        if self.repetitions < 1:
            raise InvalidInputError("repetitions must be >= 1")
        if not self.eta_inverse_grid or any(v < 0 or not math.isfinite(v) for v in self.eta_inverse_grid):
            raise InvalidInputError("eta_inverse_grid must be a non-empty list of finite values >= 0")
        if not self.training_sizes or any(int(N) < 1 for N in self.training_sizes):
            raise InvalidInputError("training_sizes must be a non-empty list of integers >= 1")
        if self.mc_draws < 0:
            raise InvalidInputError("mc_draws must be >= 0")
        object.__setattr__(self, "eta_inverse_grid", tuple(float(v) for v in self.eta_inverse_grid))
        object.__setattr__(self, "training_sizes", tuple(int(N) for N in self.training_sizes))

    def make_dgp(self):
        return PamDgp() if self.dgp_kind == "pam" else calibrate_logistic(self.gamma)

    def to_dict(self) -> dict:
        return asdict(self)


def build_market(dgp, n: int) -> MarketProfiles:
    """Place both sides at the mid-quantiles ``(i - 0.5) / n`` of their distributions."""
    if n < 2:
        raise InvalidInputError("market size must be >= 2")
    levels = (np.arange(1, n + 1) - 0.5) / n
    return MarketProfiles(dgp.x_from_uniform(levels), dgp.w_from_uniform(levels))


def true_cost_matrix(dgp, market: MarketProfiles) -> CostMatrix:
    xx, ww = np.meshgrid(market.x_values, market.w_values, indexing="ij")
    return CostMatrix(dgp.cost(xx, ww), c_bar=C_BAR)


def random_matching_welfare(c) -> float:
    values = c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise InvalidInputError("cost matrix must be square")
    return float(values.mean())


@dataclass
class PlanResult:
    """A solved plan: Sinkhorn output when ``eta_inverse > 0``, else an exact assignment."""

    eta_inverse: float
    coupling: Coupling
    potentials: DualPotentials | None = None
    report: SinkhornReport | None = None
    assignment: Assignment | None = None

    @property
    def converged(self) -> bool:
        return self.report is None or self.report.converged

    @property
    def plan(self):
        """The assignment when there is one, else the coupling."""
        return self.assignment if self.assignment is not None else self.coupling

    @property
    def eta(self) -> float:
        return math.inf if self.eta_inverse == 0 else 1.0 / self.eta_inverse


def solve_plan(c, eta_inverse: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> PlanResult:
    """Regularized plan for ``eta_inverse > 0``; exact assignment for ``eta_inverse == 0``."""
    if eta_inverse < 0:
        raise InvalidInputError("eta_inverse must be >= 0")
    if eta_inverse == 0:
        assignment = hungarian_solve(c)
        return PlanResult(0.0, Coupling.from_permutation(assignment.sigma), assignment=assignment)
    pot, coupling, report = sinkhorn_solve(c, 1.0 / eta_inverse, tol=tol, max_iter=max_iter)
    return PlanResult(eta_inverse, coupling, potentials=pot, report=report)


def _gains(welfare: float, random_welfare: float, opt_welfare: float) -> tuple[float, float]:
    gap = random_welfare - opt_welfare
    absolute = 100.0 * (random_welfare - welfare)
    relative = (random_welfare - welfare) / gap if gap > 0 else math.nan
    return absolute, relative


@dataclass
class WelfareSummary:
    """Aggregated welfare of a study plus per-run detail.

    ``rows`` has one entry per ``(N, 1/eta)`` cell (``N`` is ``None`` for
    oracle rows); ``runs`` has one entry per solve.
    """

    config: ExperimentConfig
    random_welfare: float
    oracle_opt_welfare: float
    rows: list[dict]
    runs: list[dict]
    plans: dict = field(default_factory=dict, repr=False)

    @property
    def nonconverged(self) -> int:
        return sum(1 for r in self.runs if not r["converged"])


def _market_and_cost(cfg: ExperimentConfig):
    dgp = cfg.make_dgp()
    market = build_market(dgp, cfg.market_size)
    return dgp, market, true_cost_matrix(dgp, market)


def run_oracle_sweep(cfg: ExperimentConfig) -> WelfareSummary:
    """Solve on the true cost for every ``1/eta`` in the grid."""
    ctx = _study_context(cfg)
    cost, opt, random_w, plans = ctx.cost, ctx.opt, ctx.random_welfare, ctx.oracle_plans
    n = cost.n
    runs = []
    for eta_inv in cfg.eta_inverse_grid:
        plan = plans[eta_inv]
        welfare = plan_welfare(plan.plan, cost)
        absolute, relative = _gains(welfare, random_w, opt.total_cost)
        kl = kl_divergence(plan.coupling)
        run = {
            "dgp": cfg.dgp_kind,
            "gamma": cfg.gamma,
            "n": n,
            "N": None,
            "eta_inverse": eta_inv,
            "repetition": None,
            "converged": plan.converged,
            "iterations": plan.report.iterations if plan.report else 0,
            "welfare": welfare,
            "random_welfare": random_w,
            "oracle_opt_welfare": opt.total_cost,
            "abs_gain_pp": absolute,
            "rel_gain": relative,
            "kl": kl,
        }
        if eta_inv > 0:
            eta = 1.0 / eta_inv
            bias_bound = regularization_bias_bound(n, eta)
            audit = lemma1_audit(plan.potentials, plan.coupling, C_BAR, c=cost)
            run.update(
                bias=welfare + eta_inv * kl - opt.total_cost,
                bias_bound=bias_bound,
                bias_bound_holds=welfare - opt.total_cost <= bias_bound + TOL_GAP,
                lemma1_holds=audit.holds(),
            )
        runs.append(run)
    rows = [
        {
            "N": None,
            "eta_inverse": r["eta_inverse"],
            "count": 1,
            "n_converged": int(r["converged"]),
            "welfare_mean": r["welfare"],
            "welfare_std": 0.0,
            "abs_gain_pp_mean": r["abs_gain_pp"],
            "abs_gain_pp_std": 0.0,
            "rel_gain_mean": r["rel_gain"],
            "rel_gain_std": 0.0,
        }
        for r in runs
    ]
    return WelfareSummary(cfg, random_w, opt.total_cost, rows, runs, plans)


def opt_plan(opt: Assignment) -> PlanResult:
    return PlanResult(0.0, Coupling.from_permutation(opt.sigma), assignment=opt)


@dataclass
class _StudyContext:
    dgp: object
    market: MarketProfiles
    cost: CostMatrix
    random_welfare: float
    opt: Assignment
    oracle_plans: dict


def _study_context(cfg: ExperimentConfig) -> _StudyContext:
    dgp, market, cost = _market_and_cost(cfg)
    opt = hungarian_solve(cost)
    plans = {
        eta_inv: opt_plan(opt) if eta_inv == 0 else solve_plan(cost, eta_inv, cfg.tol, cfg.max_iter)
        for eta_inv in cfg.eta_inverse_grid
    }
    return _StudyContext(dgp, market, cost, random_matching_welfare(cost), opt, plans)


def _feasible_task(args):
    cfg, ctx, N, rep = args
    dgp, market, cost, opt = ctx.dgp, ctx.market, ctx.cost, ctx.opt
    n = cost.n
    random_w = ctx.random_welfare
    train_key = derive_key(cfg.base_seed, N, rep, "train")
    if cfg.oracle_injection:
        estimator = TrueCost(dgp, C_BAR)
    else:
        sample = generate_training_sample(dgp, N, train_key)
        estimator = fit_cost_estimator(sample, cfg.estimator, features=dgp.features, c_bar=C_BAR)
    c_hat = CostMatrix(estimator.cost_grid(market.x_values, market.w_values), c_bar=C_BAR)
    l1_grid, l2_grid = empirical_error_norms(cost, c_hat)
    if cfg.mc_draws > 0:
        mc = estimator_error(estimator, dgp, cfg.mc_draws, derive_key(cfg.base_seed, N, rep, "mc-error"))
    else:
        mc = None

    runs = []
    for eta_inv in cfg.eta_inverse_grid:
        oracle = ctx.oracle_plans[eta_inv]
        feasible = solve_plan(c_hat, eta_inv, cfg.tol, cfg.max_iter)
        record = compute_regret(cost, feasible.plan, oracle.plan, opt, eta_inv)
        absolute, relative = _gains(record.feasible_welfare, random_w, opt.total_cost)
        run = {
            "dgp": cfg.dgp_kind,
            "gamma": cfg.gamma,
            "n": n,
            "N": N,
            "eta_inverse": eta_inv,
            "repetition": rep,
            "seed_key": f"{train_key:032x}",
            "converged": feasible.converged and oracle.converged,
            "iterations": feasible.report.iterations if feasible.report else 0,
            "newton_steps": feasible.report.newton_steps if feasible.report else 0,
            "marginal_residual": feasible.report.final_marginal_residual if feasible.report else 0.0,
            "feasible_welfare": record.feasible_welfare,
            "oracle_rot_welfare": record.oracle_rot_welfare,
            "oracle_opt_welfare": record.oracle_opt_welfare,
            "random_welfare": random_w,
            "abs_gain_pp": absolute,
            "rel_gain": relative,
            "regret": record.regret,
            "rot_regret": record.rot_regret,
            "kl_feasible": record.kl_feasible,
            "kl_oracle": record.kl_oracle,
            "l1_grid": l1_grid,
            "l2_grid": l2_grid,
            "l1_mc": mc.l1 if mc else math.nan,
            "l2_mc": mc.l2 if mc else math.nan,
            "l1_mc_se": mc.l1_se if mc else math.nan,
            "l2_mc_se": mc.l2_se if mc else math.nan,
        }
        if eta_inv > 0:
            eta = 1.0 / eta_inv
            bound = empirical_theorem_bound(cost, c_hat, eta, C_BAR, regret=record.regret)
            prop1 = prop1_bounds_check(cost, c_hat, feasible.potentials, feasible.coupling, C_BAR)
            audit = lemma1_audit(feasible.potentials, feasible.coupling, C_BAR, c=c_hat)
            run.update(
                variance_bound=bound.variance_bound,
                bias_bound=bound.bias_bound,
                total_bound=bound.total_bound,
                bound_vacuous=bound.vacuous,
                bound_holds=bound.holds,
                decomposition_holds=record.regret
                <= record.rot_regret + record.regularization_bias + TOL_GAP,
                prop1_cost_gap=prop1.cost_gap,
                prop1_cost_bound=prop1.cost_gap_bound,
                prop1_dual_gap=prop1.dual_gap,
                prop1_dual_bound=prop1.dual_gap_bound,
                prop1_holds=prop1.holds,
                lemma1_holds=audit.holds(),
            )
            if mc is not None:
                mc_bound = theorem_bound(mc.l1 + mc.l1_se, mc.l2 + mc.l2_se, eta, C_BAR, n)
                run.update(mc_total_bound=mc_bound.total_bound,
                           mc_bound_holds=mc_bound.vacuous or record.regret <= mc_bound.total_bound)
        runs.append(run)
    return (N, rep), runs


def _aggregate(runs: list[dict], cfg: ExperimentConfig) -> list[dict]:
    rows = []
    for N in cfg.training_sizes:
        for eta_inv in cfg.eta_inverse_grid:
            cell = [r for r in runs if r["N"] == N and r["eta_inverse"] == eta_inv]
            ok = [r for r in cell if r["converged"]]
            row = {"N": N, "eta_inverse": eta_inv, "count": len(cell), "n_converged": len(ok),
                   "n_nonconverged": len(cell) - len(ok)}
            for key in ("feasible_welfare", "abs_gain_pp", "rel_gain", "regret", "l1_grid"):
                vals = np.array([r[key] for r in ok], dtype=float)
                row[f"{key}_mean"] = float(vals.mean()) if vals.size else math.nan
                row[f"{key}_std"] = float(vals.std(ddof=1)) if vals.size > 1 else math.nan
            if eta_inv > 0:
                bounds = np.array([r["total_bound"] for r in ok], dtype=float)
                finite = bounds[np.isfinite(bounds)]
                row["total_bound_mean"] = float(finite.mean()) if finite.size else math.inf
                row["bound_vacuous_count"] = sum(1 for r in ok if r["bound_vacuous"])
                row["bound_holds_rate"] = (
                    float(np.mean([r["bound_holds"] for r in ok])) if ok else math.nan
                )
            rows.append(row)
    return rows


def run_feasible_sweep(cfg: ExperimentConfig, workers: int = 1) -> WelfareSummary:
    """Run every ``(N, repetition)`` task and aggregate by ``(N, 1/eta)`` cell.

    Tasks are independent; with ``workers > 1`` they run in a process pool
    and are merged in ``(N, repetition)`` order, so results do not depend on
    the number of workers.
    """
    ctx = _study_context(cfg)
    tasks = [(cfg, ctx, N, rep) for N in cfg.training_sizes for rep in range(cfg.repetitions)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_feasible_task, tasks))
    else:
        results = [_feasible_task(t) for t in tasks]
    results.sort(key=lambda item: item[0])
    runs = [run for _key, task_runs in results for run in task_runs]
    skipped = sum(1 for r in runs if not r["converged"])
    if skipped:
        logger.warning("%d non-converged solves excluded from cell means", skipped)
    return WelfareSummary(
        cfg, ctx.random_welfare, ctx.opt.total_cost, _aggregate(runs, cfg), runs, ctx.oracle_plans
    )
