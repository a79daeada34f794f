# %% [markdown]
# # Assortative benchmark: how much training data does a good policy need?
#
# Job-finding probability `p(x, w) = (x^2 + w^2 + x w) / 3` is supermodular,
# so the best plan pairs the i-th ranked job seeker with the i-th ranked
# caseworker. We check that, then learn the cost from samples of increasing
# size and watch the learned plans close the gap.

# %%
from matchopt.experiments import ExperimentConfig, run_feasible_sweep, run_oracle_sweep
from matchopt.cost_model import EstimatorConfig

oracle = run_oracle_sweep(ExperimentConfig(eta_inverse_grid=(0.0, 1e-4, 0.01, 0.05)))
print("optimal plan is the sorted matching:",
      oracle.plans[0.0].assignment.sigma.tolist() == list(range(100)))
for run in oracle.runs:
    print(f"oracle 1/eta={run['eta_inverse']:<7} relative gain {run['rel_gain']:.3f}")

# %% [markdown]
# Relative gain rescales welfare so that random matching is 0 and the best
# plan is 1. Small training sets can land below zero.

# %%
cfg = ExperimentConfig(eta_inverse_grid=(0.0, 0.01), training_sizes=(500, 5_000, 50_000),
                       repetitions=5, mc_draws=0, estimator=EstimatorConfig(n_rounds=100))
feasible = run_feasible_sweep(cfg)
for row in feasible.rows:
    print(f"N={row['N']:>6}  1/eta={row['eta_inverse']:<5} relative gain "
          f"{row['rel_gain_mean']:+.3f} ± {row['rel_gain_std']:.3f}   regret {row['regret_mean']:.4f}")
