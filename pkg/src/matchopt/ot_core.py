"""Entropy-regularized optimal transport between two uniform empirical measures.

Both sides of the market carry mass ``1/n`` per individual. A coupling is an
``n x n`` matrix of probability masses whose rows and columns each sum to
``1/n``. The regularized problem penalizes the Kullback-Leibler divergence of
the coupling from the product measure (all cells ``1/n**2``) with weight
``1/eta``; its dual is solved by log-domain Sinkhorn iterations on the
potentials ``(f, g)``, and the optimal coupling is recovered as

    pi_ij = exp(-eta * (c_ij - f_i - g_j)) / n**2
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ._errors import InvalidInputError, NumericalError

logger = logging.getLogger(__name__)

TOL_MARGINAL = 1e-8
TOL_NORMALIZATION = 1e-10
TOL_GAP = 1e-6

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
# Sinkhorn iterations before switching to Newton polishing on the dual.
DEFAULT_POLISH_AFTER = 500
MAX_NEWTON_STEPS = 60


@dataclass(frozen=True)
class MarketProfiles:
    """Scalar characteristics of the ``n`` individuals on each side."""

    x_values: np.ndarray
    w_values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x_values, dtype=float)
        w = np.asarray(self.w_values, dtype=float)
        if x.ndim != 1 or w.ndim != 1 or x.size != w.size or x.size < 1:
            raise InvalidInputError("x_values and w_values must be 1-d of equal length n >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            raise InvalidInputError("market profiles must be finite")
        object.__setattr__(self, "x_values", x)
        object.__setattr__(self, "w_values", w)

    @property
    def n(self) -> int:
        return self.x_values.size


@dataclass(frozen=True)
class CostMatrix:
    """Average match costs on the ``n x n`` grid, bounded in ``[0, c_bar]``."""

    values: np.ndarray
    c_bar: float = 1.0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
            raise InvalidInputError(f"cost matrix must be square, got shape {values.shape}")
        c_bar = float(self.c_bar)
        if not np.isfinite(c_bar):
            raise InvalidInputError("c_bar must be finite")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("cost matrix contains non-finite entries")
        if values.min() < 0.0 or values.max() > c_bar:
            raise InvalidInputError(
                f"costs must lie in [0, {c_bar}], got [{values.min()}, {values.max()}]"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "c_bar", c_bar)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class Coupling:
    """Joint probability mass on the grid.

    Construction only checks shape, finiteness and nonnegativity; use
    :meth:`is_feasible` or :func:`marginal_residual` for the marginal
    constraints, since unconverged solves legitimately produce infeasible
    couplings.
    """

    mass: np.ndarray

    def __post_init__(self):
        mass = np.array(self.mass, dtype=float)
        if mass.ndim != 2 or mass.shape[0] != mass.shape[1] or mass.shape[0] < 1:
            raise InvalidInputError(f"coupling must be square, got shape {mass.shape}")
        if not np.all(np.isfinite(mass)):
            raise InvalidInputError("coupling contains non-finite entries")
        if mass.min() < 0.0:
            raise InvalidInputError("coupling has negative mass")
        mass.setflags(write=False)
        object.__setattr__(self, "mass", mass)

    @property
    def n(self) -> int:
        return self.mass.shape[0]

    def is_feasible(self, tol: float = TOL_MARGINAL) -> bool:
        return marginal_residual(self) <= tol and abs(self.mass.sum() - 1.0) <= tol

    @classmethod
    def uniform(cls, n: int) -> "Coupling":
        return cls(np.full((n, n), 1.0 / n**2))

    @classmethod
    def from_permutation(cls, sigma) -> "Coupling":
        sigma = np.asarray(sigma, dtype=int)
        n = sigma.size
        mass = np.zeros((n, n))
        mass[np.arange(n), sigma] = 1.0 / n
        return cls(mass)


@dataclass(frozen=True)
class DualPotentials:
    """Dual multipliers ``f`` (X side) and ``g`` (W side) for inverse temperature ``eta``."""

    f: np.ndarray
    g: np.ndarray
    eta: float

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        g = np.array(self.g, dtype=float)
        if f.ndim != 1 or g.shape != f.shape:
            raise InvalidInputError("f and g must be 1-d vectors of equal length")
        if not (np.isfinite(self.eta) and self.eta > 0):
            raise InvalidInputError(f"eta must be positive and finite, got {self.eta}")
        f.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "eta", float(self.eta))

    @property
    def n(self) -> int:
        return self.f.size

    def normalized(self) -> "DualPotentials":
        """Shift ``g`` to mean zero and compensate in ``f``; the coupling is unchanged."""
        shift = self.g.mean()
        return DualPotentials(self.f + shift, self.g - shift, self.eta)


@dataclass
class SinkhornReport:
    iterations: int
    final_marginal_residual: float
    converged: bool
    dual_value: float
    newton_steps: int = 0
    dual_trace: list[float] | None = field(default=None, repr=False)


def _cost_values(c) -> np.ndarray:
    return c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)


def _mass(pi) -> np.ndarray:
    return pi.mass if isinstance(pi, Coupling) else np.asarray(pi, dtype=float)


def logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    """``log(sum(exp(a), axis))`` with max-subtraction."""
    a_max = np.max(a, axis=axis, keepdims=True)
    a_max = np.where(np.isfinite(a_max), a_max, 0.0)
    out = np.log(np.sum(np.exp(a - a_max), axis=axis, keepdims=True)) + a_max
    return np.squeeze(out, axis=axis)


def marginal_residual(pi, n: int | None = None) -> float:
    """Largest absolute deviation of any row or column sum from ``1/n``."""
    mass = _mass(pi)
    n = mass.shape[0] if n is None else n
    target = 1.0 / n
    rows = np.abs(mass.sum(axis=1) - target).max()
    cols = np.abs(mass.sum(axis=0) - target).max()
    return float(max(rows, cols))


def kl_divergence(pi, n: int | None = None) -> float:
    """KL divergence of ``pi`` from the uniform product measure, with ``0 log 0 = 0``."""
    mass = _mass(pi)
    if not np.all(np.isfinite(mass)):
        raise InvalidInputError("coupling contains non-finite entries")
    n = mass.shape[0] if n is None else n
    pos = mass[mass > 0]
    return float(np.sum(pos * (np.log(pos) + 2.0 * np.log(n))))


def transport_cost(pi, c) -> float:
    """Average cost ``sum_ij pi_ij c_ij`` of a coupling."""
    mass, values = _mass(pi), _cost_values(c)
    if mass.shape != values.shape:
        raise InvalidInputError(f"shape mismatch: coupling {mass.shape} vs cost {values.shape}")
    return float(np.sum(mass * values))


def primal_objective(pi, c, eta: float) -> float:
    if not eta > 0:
        raise InvalidInputError(f"eta must be positive, got {eta}")
    return transport_cost(pi, c) + kl_divergence(pi) / eta


def dual_objective(c, pot: DualPotentials) -> float:
    values = _cost_values(c)
    n = pot.n
    if values.shape != (n, n):
        raise InvalidInputError(f"shape mismatch: cost {values.shape} vs potentials of length {n}")
    eta = pot.eta
    density = np.exp(-eta * (values - pot.f[:, None] - pot.g[None, :]))
    return float(pot.f.mean() + pot.g.mean() - (density.mean() - 1.0) / eta)


def coupling_from_potentials(c, pot: DualPotentials) -> Coupling:
    values = _cost_values(c)
    n = pot.n
    if values.shape != (n, n):
        raise InvalidInputError(f"shape mismatch: cost {values.shape} vs potentials of length {n}")
    log_mass = -pot.eta * (values - pot.f[:, None] - pot.g[None, :]) - 2.0 * np.log(n)
    with np.errstate(over="ignore"):
        mass = np.exp(log_mass)
    if not np.all(np.isfinite(mass)):
        raise NumericalError("coupling overflowed; potentials are not consistent with this cost")
    return Coupling(mass)


def _newton_polish(values, eta, f, g, tol, max_steps=MAX_NEWTON_STEPS):
    """Damped Newton ascent on the dual, started from Sinkhorn iterates.

    The last ``g`` coordinate is held fixed to remove the translation
    direction. Steps are accepted when they raise the dual or halve the
    marginal residual. Near-permutation couplings make the Hessian almost
    singular (blocks of the support decouple), so the system is shifted by a
    Levenberg-Marquardt term that grows on rejection and shrinks on success.
    """
    n = f.size
    log_n2 = 2.0 * np.log(n)

    def evaluate(f, g):
        # Overshooting trial steps may overflow; they are rejected below.
        with np.errstate(over="ignore", invalid="ignore"):
            mass = np.exp(-eta * (values - f[:, None] - g[None, :]) - log_n2)
        rows, cols = mass.sum(axis=1), mass.sum(axis=0)
        dual = f.mean() + g.mean() - (mass.sum() - 1.0) / eta
        res = max(np.abs(rows - 1.0 / n).max(), np.abs(cols - 1.0 / n).max())
        return mass, rows, cols, dual, res

    mass, rows, cols, dual, res = evaluate(f, g)
    eye = np.eye(2 * n - 1)
    damping = 0.0
    steps = 0
    attempts = 0
    while steps < max_steps and attempts < 20 * max_steps and res > 0.1 * tol:
        attempts += 1
        grad = np.concatenate([1.0 / n - rows, 1.0 / n - cols])
        hess = np.empty((2 * n, 2 * n))
        hess[:n, :n] = np.diag(rows)
        hess[n:, n:] = np.diag(cols)
        hess[:n, n:] = mass
        hess[n:, :n] = mass.T
        hess *= eta
        scale = eta / n
        direction = np.zeros(2 * n)
        try:
            direction[:-1] = np.linalg.solve(hess[:-1, :-1] + damping * scale * eye, grad[:-1])
        except np.linalg.LinAlgError:
            direction[:-1] = np.linalg.lstsq(hess[:-1, :-1], grad[:-1], rcond=None)[0]
        f_new = f + direction[:n]
        g_new = g + direction[n:]
        trial = evaluate(f_new, g_new)
        if np.isfinite(trial[3]) and (trial[3] >= dual or trial[4] < 0.5 * res):
            f, g = f_new, g_new
            mass, rows, cols, dual, res = trial
            steps += 1
            damping = 0.0 if damping < 1e-12 else damping / 10.0
        else:
            damping = 1e-12 if damping == 0.0 else damping * 10.0
            if damping > 1e8:
                break
    return f, g, steps


def sinkhorn_solve(
    c,
    eta: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    *,
    polish: bool = True,
    polish_after: int = DEFAULT_POLISH_AFTER,
    record_dual: bool = False,
) -> tuple[DualPotentials, Coupling, SinkhornReport]:
    """Solve the regularized transport problem by log-domain Sinkhorn.

    Parameters
    ----------
    c : CostMatrix or array_like
        Square cost matrix. Plain arrays are wrapped with ``c_bar = max(c)``.
    eta : float
        Inverse regularization strength, ``eta > 0``.
    tol : float
        Stop when every row and column sum is within ``tol`` of ``1/n``.
    max_iter : int
        Budget of full (f then g) Sinkhorn sweeps.
    polish : bool
        If the sweeps have not converged after ``polish_after`` iterations,
        finish with damped Newton steps on the dual. Small regularization
        makes plain Sinkhorn converge sublinearly, so without polishing
        ``eta`` in the hundreds can exhaust any practical budget.
    record_dual : bool
        Store the dual objective after every sweep in ``report.dual_trace``.

    Returns
    -------
    potentials, coupling, report
        Potentials are normalized so that ``g`` has mean zero.
        ``report.converged`` is False if the tolerance was not met; the
        coupling is still returned.
    """
    if not (np.isfinite(eta) and eta > 0):
        raise InvalidInputError(f"eta must be positive and finite, got {eta}")
    if not tol > 0:
        raise InvalidInputError(f"tol must be positive, got {tol}")
    if not isinstance(c, CostMatrix):
        arr = np.asarray(c, dtype=float)
        c = CostMatrix(arr, c_bar=max(float(arr.max()), 0.0) if arr.size else 1.0)
    values = c.values
    n = c.n
    log_n = np.log(n)
    kernel = -eta * values
    f = np.zeros(n)
    g = np.zeros(n)
    trace = [] if record_dual else None

    def g_update(f):
        return (log_n - logsumexp(kernel + eta * f[:, None], axis=0)) / eta

    # Columns are exact after each g half-step, so only rows need checking.
    g = g_update(f)
    iterations = 0
    residual = np.inf
    newton_steps = 0
    while True:
        row_lse = logsumexp(kernel + eta * g[None, :], axis=1)
        row_sums = np.exp(eta * f + row_lse - 2.0 * log_n)
        residual = float(np.abs(row_sums - 1.0 / n).max())
        if record_dual:
            trace.append(dual_objective(values, DualPotentials(f, g, eta)))
        if residual <= tol or iterations >= max_iter:
            break
        if polish and iterations >= polish_after:
            f, g, newton_steps = _newton_polish(values, eta, f, g, tol)
            # One exact coordinate sweep restores column feasibility.
            f = (log_n - logsumexp(kernel + eta * g[None, :], axis=1)) / eta
            g = g_update(f)
            polish = False
            continue
        f = (log_n - row_lse) / eta
        g = g_update(f)
        iterations += 1

    pot = DualPotentials(f, g, eta).normalized()
    coupling = coupling_from_potentials(values, pot)
    residual = marginal_residual(coupling)
    report = SinkhornReport(
        iterations=iterations,
        final_marginal_residual=residual,
        converged=residual <= tol,
        dual_value=dual_objective(values, pot),
        newton_steps=newton_steps,
        dual_trace=trace,
    )
    if not report.converged:
        logger.warning(
            "Sinkhorn did not converge: residual %.3g after %d iterations (eta=%g)",
            residual, iterations, eta,
        )
    return pot, coupling, report
