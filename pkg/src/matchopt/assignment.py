"""Exact one-to-one assignment (unregularized empirical transport)."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._errors import InvalidInputError
from .ot_core import CostMatrix

BRUTE_FORCE_MAX_N = 10


@dataclass(frozen=True)
class Assignment:
    """A permutation ``sigma`` (X index -> W index) and its average cost."""

    sigma: np.ndarray
    total_cost: float

    @property
    def n(self) -> int:
        return self.sigma.size


def _square_finite(c) -> np.ndarray:
    values = c.values if isinstance(c, CostMatrix) else np.asarray(c, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1] or values.shape[0] < 1:
        raise InvalidInputError(f"cost matrix must be square, got shape {values.shape}")
    if not np.all(np.isfinite(values)):
        raise InvalidInputError("cost matrix contains non-finite entries")
    return values


def average_cost(values: np.ndarray, sigma) -> float:
    """Exactly rounded mean of ``values[i, sigma[i]]``.

    ``math.fsum`` makes the result independent of summation order, so two
    permutations with the same exact cost get bit-identical averages.
    """
    n = values.shape[0]
    return math.fsum(values[np.arange(n), np.asarray(sigma)].tolist()) / n


def hungarian_solve(c) -> Assignment:
    """Minimum average cost assignment by shortest augmenting paths.

    O(n^3) dual-based Hungarian method (Jonker-Volgenant style row-by-row
    augmentation), with the inner scan over columns vectorized.
    """
    a = _square_finite(c)
    n = a.shape[0]
    inf = np.inf
    # 1-based bookkeeping: column 0 is the virtual root of each search tree.
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)  # p[j] = row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0 - 1] - u[i0] - v[1:]
            cur = np.concatenate(([inf], cur))
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            masked = np.where(free, minv, inf)
            j1 = int(np.argmin(masked))
            delta = masked[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    sigma = np.empty(n, dtype=np.int64)
    sigma[p[1:] - 1] = np.arange(n)
    return Assignment(sigma, average_cost(a, sigma))


def brute_force_solve(c) -> Assignment:
    """Enumerate all ``n!`` permutations; ties go to the lexicographically smallest."""
    a = _square_finite(c)
    n = a.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise InvalidInputError(f"brute force refused for n={n} > {BRUTE_FORCE_MAX_N}")
    rows = np.arange(n)
    best_sigma, best_cost = None, np.inf
    perms = itertools.permutations(range(n))
    while True:
        chunk = np.array(list(itertools.islice(perms, 200_000)), dtype=np.int8)
        if chunk.size == 0:
            break
        # fsum per candidate would be slow; screen with float sums, then re-rank exactly.
        approx = a[rows, chunk].sum(axis=1)
        lo = approx.min()
        slack = 1e-9 * max(1.0, np.abs(a).sum())
        for k in np.flatnonzero(approx <= lo + slack):
            cost = average_cost(a, chunk[k])
            if cost < best_cost:
                best_sigma, best_cost = chunk[k].astype(np.int64), cost
    return Assignment(best_sigma, best_cost)


def pad_to_square(c, fill: float = 0.0) -> np.ndarray:
    """Pad a rectangular cost matrix with dummy rows or columns of cost ``fill``."""
    values = np.asarray(c, dtype=float)
    if values.ndim != 2:
        raise InvalidInputError("cost matrix must be 2-d")
    rows, cols = values.shape
    n = max(rows, cols)
    out = np.full((n, n), float(fill))
    out[:rows, :cols] = values
    return out
