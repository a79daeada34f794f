"""Welfare-optimal one-to-one matching via entropy-regularized optimal transport."""

__version__ = "0.1.0"

from ._errors import InvalidInputError, NumericalError
from .assignment import Assignment, brute_force_solve, hungarian_solve, pad_to_square
from .bvn import PermutationMixture, bvn_decompose, sample_assignment
from .cost_model import (
    CostEstimator,
    EstimatorConfig,
    LogisticDgp,
    PamDgp,
    TrainingSample,
    calibrate_logistic,
    estimator_error,
    fit_cost_estimator,
    generate_training_sample,
    pam_cost,
)
from .ot_core import (
    CostMatrix,
    Coupling,
    DualPotentials,
    MarketProfiles,
    SinkhornReport,
    coupling_from_potentials,
    dual_objective,
    kl_divergence,
    marginal_residual,
    primal_objective,
    sinkhorn_solve,
)

__all__ = [
    "Assignment",
    "CostEstimator",
    "CostMatrix",
    "Coupling",
    "DualPotentials",
    "EstimatorConfig",
    "InvalidInputError",
    "LogisticDgp",
    "MarketProfiles",
    "NumericalError",
    "PamDgp",
    "PermutationMixture",
    "SinkhornReport",
    "TrainingSample",
    "brute_force_solve",
    "bvn_decompose",
    "calibrate_logistic",
    "coupling_from_potentials",
    "dual_objective",
    "estimator_error",
    "fit_cost_estimator",
    "generate_training_sample",
    "hungarian_solve",
    "kl_divergence",
    "marginal_residual",
    "pad_to_square",
    "pam_cost",
    "primal_objective",
    "sample_assignment",
    "sinkhorn_solve",
]
