"""Realized regret of matching policies and the finite-sample bounds that control it.

All welfare numbers are average costs per match under the true cost, so
lower is better and regret is nonnegative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._errors import InvalidInputError
from .assignment import Assignment, average_cost
from .ot_core import (
    TOL_GAP,
    DualPotentials,
    _cost_values,
    _mass,
    dual_objective,
    kl_divergence,
    transport_cost,
)

# Largest exponent whose exp() is safely below the double-precision ceiling.
MAX_EXPONENT = 700.0


@dataclass(frozen=True)
class RegretRecord:
    feasible_welfare: float
    oracle_rot_welfare: float
    oracle_opt_welfare: float
    regret: float
    rot_regret: float
    kl_feasible: float
    kl_oracle: float
    eta_inverse: float

    @property
    def regularization_bias(self) -> float:
        """Regularized oracle objective minus the unregularized optimum."""
        return self.oracle_rot_welfare + self.eta_inverse * self.kl_oracle - self.oracle_opt_welfare


@dataclass(frozen=True)
class BoundReport:
    l1_term: float
    l2_sq_term: float
    variance_bound: float
    bias_bound: float
    total_bound: float
    vacuous: bool
    holds: bool | None = None


def compute_regret(c_true, feasible, oracle_rot, oracle_opt: Assignment, eta_inverse: float) -> RegretRecord:
    """Welfare of the feasible and oracle plans and the two regret notions.

    ``eta_inverse`` weights the KL terms in the regularized regret; use 0 when
    both plans are unregularized. Plans may be couplings or assignments;
    assignments are scored with the same exactly rounded average as
    ``oracle_opt``, so an optimal plan has regret exactly 0.
    """
    values = _cost_values(c_true)
    n = values.shape[0]
    for obj in (feasible, oracle_rot):
        size = obj.n if isinstance(obj, Assignment) else _mass(obj).shape
        if size not in (n, values.shape):
            raise InvalidInputError("plan and cost dimensions differ")
    if oracle_opt.n != n:
        raise InvalidInputError("assignment and cost dimensions differ")
    if eta_inverse < 0:
        raise InvalidInputError("eta_inverse must be >= 0")
    feasible_welfare = plan_welfare(feasible, values)
    rot_welfare = plan_welfare(oracle_rot, values)
    opt_welfare = average_cost(values, oracle_opt.sigma)
    kl_feasible = _plan_kl(feasible)
    kl_oracle = _plan_kl(oracle_rot)
    rot_regret = feasible_welfare - rot_welfare + eta_inverse * (kl_feasible - kl_oracle)
    return RegretRecord(
        feasible_welfare=feasible_welfare,
        oracle_rot_welfare=rot_welfare,
        oracle_opt_welfare=opt_welfare,
        regret=feasible_welfare - opt_welfare,
        rot_regret=rot_regret,
        kl_feasible=kl_feasible,
        kl_oracle=kl_oracle,
        eta_inverse=eta_inverse,
    )


def plan_welfare(plan, c) -> float:
    """Average cost of a coupling or an assignment under ``c``."""
    values = _cost_values(c)
    if isinstance(plan, Assignment):
        return average_cost(values, plan.sigma)
    return transport_cost(plan, values)


def _plan_kl(plan) -> float:
    return math.log(plan.n) if isinstance(plan, Assignment) else kl_divergence(plan)


def regularization_bias_bound(n: int, eta: float) -> float:
    if n < 1 or not eta > 0:
        raise InvalidInputError("need n >= 1 and eta > 0")
    return math.log(n) / eta


def _scaled_by_density_cap(term: float, eta: float, c_bar: float) -> tuple[float, bool]:
    """``exp(2 eta c_bar) * term`` evaluated in log space; flags overflow."""
    exponent = 2.0 * eta * c_bar
    if term == 0.0:
        return 0.0, exponent > MAX_EXPONENT
    if exponent > MAX_EXPONENT:
        return math.inf, True
    log_value = exponent + math.log(term)
    if log_value > math.log(1e300):
        return math.inf, True
    return math.exp(log_value), False


def theorem_bound(l1: float, l2: float, eta: float, c_bar: float, n: int) -> BoundReport:
    """Regret bound ``exp(2 eta c_bar) (L1 + L2^2) + log(n) / eta``.

    When the exponential factor overflows the bound is reported as ``inf``
    with ``vacuous=True``.
    """
    if l1 < 0 or l2 < 0:
        raise InvalidInputError("error norms must be nonnegative")
    l2_sq = l2 * l2
    variance, vacuous = _scaled_by_density_cap(l1 + l2_sq, eta, c_bar)
    if vacuous:
        variance = math.inf
    bias = regularization_bias_bound(n, eta)
    return BoundReport(
        l1_term=l1,
        l2_sq_term=l2_sq,
        variance_bound=variance,
        bias_bound=bias,
        total_bound=variance + bias,
        vacuous=vacuous,
    )


def empirical_error_norms(c_true, c_hat) -> tuple[float, float]:
    """L1 and L2 distances under the empirical product measure (grid averages)."""
    diff = _cost_values(c_hat) - _cost_values(c_true)
    return float(np.abs(diff).mean()), float(np.sqrt(np.mean(diff * diff)))


def empirical_theorem_bound(c_true, c_hat, eta: float, c_bar: float, regret: float | None = None) -> BoundReport:
    """:func:`theorem_bound` with exact grid norms; sets ``holds`` if ``regret`` is given."""
    l1, l2 = empirical_error_norms(c_true, c_hat)
    report = theorem_bound(l1, l2, eta, c_bar, _cost_values(c_true).shape[0])
    if regret is None:
        return report
    holds = report.vacuous or regret <= report.total_bound + TOL_GAP
    return BoundReport(**{**report.__dict__, "holds": bool(holds)})


@dataclass(frozen=True)
class Prop1Report:
    """Slack (bound minus lhs) of the two estimation-error inequalities."""

    cost_gap: float
    cost_gap_bound: float
    dual_gap: float
    dual_gap_bound: float

    @property
    def cost_slack(self) -> float:
        return self.cost_gap_bound - self.cost_gap

    @property
    def dual_slack(self) -> float:
        return self.dual_gap_bound - self.dual_gap

    @property
    def cost_holds(self) -> bool:
        return self.cost_gap <= self.cost_gap_bound * (1 + 1e-12) + 1e-15

    @property
    def dual_holds(self) -> bool:
        return self.dual_gap <= self.dual_gap_bound * (1 + 1e-12) + 1e-15

    @property
    def holds(self) -> bool:
        return self.cost_holds and self.dual_holds


def prop1_bounds_check(c_true, c_hat, pot: DualPotentials, pi_hat, c_bar: float = 1.0) -> Prop1Report:
    """Compare estimation-error effects with their density-capped bounds.

    Checks, over the empirical product measure,

    * ``|pi_hat(c) - pi_hat(c_hat)| <= exp(2 eta c_bar) * mean|c_hat - c|``
    * ``|Phi(c_hat, f, g) - Phi(c, f, g)| <= exp(2 eta c_bar) * mean (c - c_hat)^2``

    with ``(f, g)`` the potentials solved under ``c_hat``. The first follows
    from the density bound on the coupling. The second is not implied in
    general: the change of the dual objective is first order in
    ``c_hat - c``, so a systematic shift of ``c_hat`` can violate it at
    moderate ``eta``. Violations are reported, never raised.
    """
    values, hat = _cost_values(c_true), _cost_values(c_hat)
    if values.shape != hat.shape:
        raise InvalidInputError("cost dimensions differ")
    diff = hat - values
    eta = pot.eta
    cost_gap = abs(transport_cost(pi_hat, values) - transport_cost(pi_hat, hat))
    dual_gap = abs(dual_objective(hat, pot) - dual_objective(values, pot))
    l1_bound, _ = _scaled_by_density_cap(float(np.abs(diff).mean()), eta, c_bar)
    l2_bound, _ = _scaled_by_density_cap(float(np.mean(diff * diff)), eta, c_bar)
    if 2.0 * eta * c_bar > MAX_EXPONENT:
        l1_bound = l2_bound = math.inf
    return Prop1Report(cost_gap, l1_bound, dual_gap, l2_bound)


@dataclass(frozen=True)
class Lemma1Report:
    """Worst slack of each bound; negative slack means a violation."""

    f_lower_slack: float
    f_upper_slack: float
    g_lower_slack: float
    g_upper_slack: float
    density_lower_slack: float
    density_upper_slack: float

    @property
    def potential_slack(self) -> float:
        return min(self.f_lower_slack, self.f_upper_slack, self.g_lower_slack, self.g_upper_slack)

    def holds(self, tol: float = 1e-10, density_rtol: float = TOL_GAP) -> bool:
        return (
            self.potential_slack >= -tol
            and self.density_lower_slack >= -density_rtol
            and self.density_upper_slack >= -density_rtol
        )


def lemma1_audit(pot: DualPotentials, pi, c_bar: float, c=None) -> Lemma1Report:
    """Check the potential box ``[-c_bar, c_bar]`` and the density band.

    The density ``n^2 pi`` must lie in ``[exp(-3 eta c_bar), exp(2 eta c_bar)]``.
    Density slacks are relative, ``exp(log_density - log_bound) - 1`` on each
    side, so ``-1e-6`` means one part per million outside the band. Passing
    the cost ``c`` lets the log-density be formed from the potentials, which
    avoids underflow of tiny masses at large ``eta``.
    """
    mass = _mass(pi)
    n = mass.shape[0]
    eta = pot.eta
    if c is not None:
        log_density = -eta * (_cost_values(c) - pot.f[:, None] - pot.g[None, :])
    else:
        with np.errstate(divide="ignore"):
            log_density = np.log(mass) + 2.0 * np.log(n)
    lo = -3.0 * eta * c_bar
    hi = 2.0 * eta * c_bar
    lowest = log_density.min()
    if np.isneginf(lowest):
        # A zero mass only meets the lower bound if that bound itself underflows.
        density_lower = 0.0 if math.exp(lo) == 0.0 else -1.0
    else:
        density_lower = float(np.expm1(min(lowest - lo, MAX_EXPONENT)))
    return Lemma1Report(
        f_lower_slack=float((pot.f + c_bar).min()),
        f_upper_slack=float((c_bar - pot.f).min()),
        g_lower_slack=float((pot.g + c_bar).min()),
        g_upper_slack=float((c_bar - pot.g).min()),
        density_lower_slack=density_lower,
        density_upper_slack=float(np.expm1(min(hi - log_density.max(), MAX_EXPONENT))),
    )
