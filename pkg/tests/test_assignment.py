import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linear_sum_assignment

from matchopt import InvalidInputError
from matchopt.assignment import (
    BRUTE_FORCE_MAX_N,
    average_cost,
    brute_force_solve,
    hungarian_solve,
    pad_to_square,
)
from matchopt.ot_core import CostMatrix


def _is_permutation(sigma, n):
    return np.array_equal(np.sort(sigma), np.arange(n))


def test_single_agent():
    a = hungarian_solve([[0.3]])
    assert a.sigma.tolist() == [0] and a.total_cost == 0.3


def test_anti_diagonal_cost_gives_identity():
    c = CostMatrix([[0.0, 1.0], [1.0, 0.0]])
    for solver in (hungarian_solve, brute_force_solve):
        a = solver(c)
        assert a.sigma.tolist() == [0, 1] and a.total_cost == 0.0


def test_supermodular_surplus_sorted_matching():
    x = np.array([0.1, 0.5, 0.9])
    w = np.array([0.2, 0.3, 0.8])
    c = -np.outer(x, w)
    assert brute_force_solve(c).sigma.tolist() == [0, 1, 2]
    assert hungarian_solve(c).sigma.tolist() == [0, 1, 2]


def test_constant_cost_ties_to_identity():
    a = brute_force_solve(np.full((5, 5), 0.4))
    assert a.sigma.tolist() == list(range(5))
    assert a.total_cost == pytest.approx(0.4, rel=1e-15)


def test_brute_force_guard():
    with pytest.raises(InvalidInputError):
        brute_force_solve(np.zeros((BRUTE_FORCE_MAX_N + 1,) * 2))


def test_rejects_bad_shapes():
    for bad in (np.zeros((2, 3)), np.zeros((0, 0)), [[np.nan]]):
        with pytest.raises(InvalidInputError):
            hungarian_solve(bad)


@pytest.mark.parametrize("seed", range(20))
def test_matches_brute_force_exactly_n8(seed):
    c = np.random.default_rng(seed).random((8, 8))
    assert hungarian_solve(c).total_cost == brute_force_solve(c).total_cost


def test_total_cost_recomputable():
    c = np.random.default_rng(1).random((30, 30))
    a = hungarian_solve(c)
    assert _is_permutation(a.sigma, 30)
    assert a.total_cost == pytest.approx(c[np.arange(30), a.sigma].mean(), rel=1e-14)


@pytest.mark.parametrize("n", [50, 200])
def test_matches_scipy_reference(n):
    c = np.random.default_rng(n).random((n, n))
    rows, cols = linear_sum_assignment(c)
    assert hungarian_solve(c).total_cost == pytest.approx(c[rows, cols].mean(), rel=1e-13)


def test_integer_ties_and_degenerate_costs():
    c = np.random.default_rng(2).integers(0, 3, size=(7, 7)).astype(float)
    assert hungarian_solve(c).total_cost == brute_force_solve(c).total_cost


def test_row_column_shift_invariance():
    rng = np.random.default_rng(3)
    c = rng.random((7, 7))
    r, s = rng.random(7), rng.random(7)
    shifted = c + r[:, None] + s[None, :]
    base = hungarian_solve(c)
    moved = hungarian_solve(shifted)
    assert moved.total_cost == pytest.approx(base.total_cost + r.mean() + s.mean(), rel=1e-12)
    # The original optimizer is still optimal for the shifted problem.
    assert average_cost(shifted, base.sigma) == pytest.approx(moved.total_cost, rel=1e-12)


def test_submodular_cost_grid_is_assortative():
    x = np.sort(np.random.default_rng(4).random(40))
    w = np.sort(np.random.default_rng(5).random(40))
    c = 1.0 - (x[:, None] + w[None, :] + x[:, None] * w[None, :]) / 3.0
    assert hungarian_solve(c).sigma.tolist() == list(range(40))


def test_pad_to_square():
    out = pad_to_square([[1.0, 2.0, 3.0]])
    assert out.shape == (3, 3)
    assert out[0].tolist() == [1.0, 2.0, 3.0] and np.all(out[1:] == 0.0)
    a = hungarian_solve(out)
    assert _is_permutation(a.sigma, 3)
    assert a.total_cost == pytest.approx(1.0 / 3)


def test_average_cost_order_independent():
    values = np.array([[1e16, 1.0], [1.0, -1e16]])
    assert average_cost(values, [0, 1]) == 0.0


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_property_optimal_over_all_permutations(n, seed):
    c = np.random.default_rng(seed).random((n, n))
    a = hungarian_solve(c)
    best = min(average_cost(c, p) for p in itertools.permutations(range(n)))
    assert a.total_cost == best
