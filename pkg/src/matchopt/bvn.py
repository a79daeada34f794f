"""Birkhoff-von Neumann decomposition of couplings into lotteries over assignments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from ._errors import InvalidInputError, NumericalError
from .ot_core import TOL_MARGINAL, Coupling
from .rng import make_generator

EPS_SUPPORT = 1e-12
TOL_BVN = 1e-8
# Largest row/column-sum defect of n * pi accepted before rebalancing.
MAX_DEFECT = 1e-6


@dataclass(frozen=True)
class PermutationMixture:
    """Convex combination of permutations.

    ``sigmas[k]`` maps X index to W index and is drawn with probability
    ``weights[k]``.
    """

    weights: np.ndarray
    sigmas: np.ndarray
    source_n: int

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        sigmas = np.asarray(self.sigmas, dtype=np.int64).reshape(-1, self.source_n)
        if weights.ndim != 1 or weights.size != sigmas.shape[0] or weights.size == 0:
            raise InvalidInputError("need one weight per permutation and at least one component")
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > TOL_MARGINAL:
            raise InvalidInputError("weights must be positive and sum to 1")
        expected = np.arange(self.source_n)
        if not all(np.array_equal(np.sort(s), expected) for s in sigmas):
            raise InvalidInputError("every component must be a permutation")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "sigmas", sigmas)

    def __len__(self):
        return self.weights.size

    @property
    def components(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.weights.tolist(), self.sigmas))

    def doubly_stochastic(self) -> np.ndarray:
        """``sum_k w_k P(sigma_k)``, which should equal ``n * pi``."""
        n = self.source_n
        out = np.zeros((n, n))
        rows = np.arange(n)
        for w, sigma in zip(self.weights, self.sigmas):
            out[rows, sigma] += w
        return out

    def component_costs(self, c) -> np.ndarray:
        values = getattr(c, "values", c)
        values = np.asarray(values, dtype=float)
        rows = np.arange(self.source_n)
        return values[rows, self.sigmas].mean(axis=1)

    def expected_cost(self, c) -> float:
        return float(self.weights @ self.component_costs(c))


def _balance(matrix: np.ndarray, max_iter: int = 1000) -> np.ndarray:
    """Rescale rows and columns until every sum is 1 to rounding.

    Solver couplings meet the marginals only to a tolerance, and peeling a
    matrix that is not exactly doubly stochastic leaves a remainder with no
    perfect matching. Multiplicative scaling keeps the support and moves
    each entry by about the size of the defect.
    """
    if np.any(matrix < 0) or not np.all(np.isfinite(matrix)):
        raise InvalidInputError("coupling must be finite and nonnegative")
    if not matrix.any():
        raise InvalidInputError("coupling has no mass to decompose")
    defect = max(np.abs(matrix.sum(axis=1) - 1).max(), np.abs(matrix.sum(axis=0) - 1).max())
    if defect > MAX_DEFECT:
        raise NumericalError(
            f"marginal defect {defect:.3g} of n * pi exceeds {MAX_DEFECT}; "
            "input is not (close to) doubly stochastic"
        )
    out = matrix.copy()
    for _ in range(max_iter):
        out /= out.sum(axis=1, keepdims=True)
        out /= out.sum(axis=0, keepdims=True)
        if np.abs(out.sum(axis=1) - 1).max() <= 1e-14:
            break
    return out


def bvn_decompose(
    pi,
    eps_support: float = EPS_SUPPORT,
    tol: float = TOL_BVN,
) -> PermutationMixture:
    """Greedy Birkhoff-von Neumann peeling of a coupling.

    The scaled coupling ``n * pi`` is first rebalanced to be exactly doubly
    stochastic. Peeling then repeatedly finds a perfect matching
    (Hopcroft-Karp) on the cells of the residual above ``eps_support``, peels off the smallest entry along it and
    zeroes that cell, until the residual mass per row drops below
    ``tol / 100`` (or below ``tol`` once the support has no perfect matching). The discarded
    remainder is absorbed by renormalizing the weights.
    """
    mass = pi.mass if isinstance(pi, Coupling) else np.asarray(pi, dtype=float)
    n = mass.shape[0]
    if mass.ndim != 2 or mass.shape[1] != n:
        raise InvalidInputError(f"coupling must be square, got shape {mass.shape}")
    residual = _balance(n * mass)
    rows = np.arange(n)
    weights, sigmas = [], []
    # At most n^2 cells can be zeroed, so this bounds the loop.
    for _ in range(n * n + 1):
        remaining = residual.sum() / n
        # Every row of the residual carries ``remaining``, which bounds the
        # entrywise error of dropping it; aim well below ``tol``.
        if remaining <= 0.01 * tol:
            break
        support = csr_matrix(residual > eps_support)
        match = maximum_bipartite_matching(support, perm_type="column")
        if np.any(match < 0):
            if remaining <= tol:
                break
            raise NumericalError(
                f"no perfect matching on the support with residual mass {remaining:.3g}; "
                "input is not (close to) doubly stochastic"
            )
        picked = residual[rows, match]
        k = int(np.argmin(picked))
        weight = picked[k]
        residual[rows, match] = np.maximum(picked - weight, 0.0)
        residual[k, match[k]] = 0.0
        weights.append(weight)
        sigmas.append(match.astype(np.int64))
    if not weights:
        raise InvalidInputError("coupling has no mass to decompose")
    weights = np.asarray(weights)
    return PermutationMixture(weights / weights.sum(), np.asarray(sigmas), n)


def sample_assignment(mix: PermutationMixture, seed: int, size: int | None = None) -> np.ndarray:
    """Draw permutations from the mixture by inverse CDF on a Philox stream.

    Returns one permutation, or a ``(size, n)`` array if ``size`` is given.
    """
    rng = make_generator(seed, "bvn-sample")
    cdf = np.cumsum(mix.weights)
    u = rng.random(1 if size is None else size)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)
    draws = mix.sigmas[idx]
    return draws[0] if size is None else draws
