# %% [markdown]
# # From a cost matrix to an implementable lottery
#
# Six job seekers, six caseworkers, and a matrix of expected costs. We solve
# the exact assignment, then the entropy-regularized plan at a few
# regularization levels, and finally turn one regularized plan into a lottery
# over one-to-one assignments that can actually be carried out.

# %%
import numpy as np

from matchopt import (
    CostMatrix,
    bvn_decompose,
    hungarian_solve,
    kl_divergence,
    sample_assignment,
    sinkhorn_solve,
)

rng = np.random.default_rng(7)
c = CostMatrix(rng.random((6, 6)))
opt = hungarian_solve(c)
print("optimal assignment", opt.sigma, "average cost", round(opt.total_cost, 4))
print("random matching   ", round(c.values.mean(), 4))

# %% [markdown]
# Larger `eta` means weaker regularization. The plan's cost falls toward the
# optimum while its entropy penalty (KL from random matching) rises toward
# `log n`.

# %%
for eta in (1.0, 10.0, 100.0):
    pot, pi, report = sinkhorn_solve(c, eta)
    cost = float(np.sum(pi.mass * c.values))
    print(f"eta={eta:6.1f}  cost={cost:.4f}  KL={kl_divergence(pi):.3f}  "
          f"iterations={report.iterations}  converged={report.converged}")
print("log n =", round(np.log(6), 3))

# %% [markdown]
# A coupling is a fractional plan. Birkhoff-von Neumann peeling writes it as
# a convex combination of permutations; drawing one permutation with those
# weights implements the plan on average.

# %%
_, pi, _ = sinkhorn_solve(c, 10.0, tol=1e-12)
mix = bvn_decompose(pi)
print(len(mix), "permutations; largest weights", np.round(np.sort(mix.weights)[::-1][:3], 3))
draws = sample_assignment(mix, seed=1, size=20_000)
sampled = c.values[np.arange(6), draws].mean(axis=1).mean()
print("sampled cost", round(sampled, 4), "vs plan cost", round(float(np.sum(pi.mass * c.values)), 4))
