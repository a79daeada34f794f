"""Simulated job-seeker/caseworker markets and estimation of the match cost.

Two data-generating processes are provided. In both, the cost of a match is
the probability that the job seeker is still unemployed after six months,
``c(x, w) = 1 - p(x, w)`` with ``p`` the job-finding probability.

* :class:`PamDgp`: ``X, W ~ U[0, 1]`` and ``p = (x^2 + w^2 + x w) / 3``.
* :class:`LogisticDgp`: ``X ~ Beta(3.7939, 8.8634)``, ``W ~ N(0, 1)`` and
  ``p = logistic(a + b x + c w + d x w)`` calibrated by
  :func:`calibrate_logistic`.

Training outcomes are coded ``y = 1`` for the cost event (still unemployed),
so ``E[y | x, w] = c(x, w)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import betainc, expit, logit, ndtri

from . import __version__
from ._errors import InvalidInputError
from .boosting import BinnedMeanEstimator, ConstantModel, GradientBoostedTrees, model_from_dict
from .rng import make_generator

BETA_ALPHA = 3.7939
BETA_BETA = 8.8634
GAMMA_GRID = (0.02, 0.06, 0.10)
CALIBRATION_TOL = 1e-10

ESTIMATOR_FORMAT = "matchopt.cost_estimator"
ESTIMATOR_FORMAT_VERSION = 1


def beta_ppf(q, alpha: float, beta: float, tol: float = 1e-12) -> np.ndarray:
    """Beta quantile function by bisection on the regularized incomplete beta."""
    q = np.asarray(q, dtype=float)
    lo = np.zeros_like(q)
    hi = np.ones_like(q)
    n_steps = int(np.ceil(np.log2(1.0 / tol)))
    for _ in range(n_steps):
        mid = 0.5 * (lo + hi)
        below = betainc(alpha, beta, mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def normal_ppf(q) -> np.ndarray:
    return ndtri(np.asarray(q, dtype=float))


def pam_cost(x, w):
    """``1 - (x^2 + w^2 + x w) / 3`` on ``[0, 1]^2``."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any((x < 0) | (x > 1) | (w < 0) | (w > 1)) or np.any(np.isnan(x) | np.isnan(w)):
        raise InvalidInputError("pam_cost is defined on [0, 1]^2")
    out = 1.0 - (x * x + w * w + x * w) / 3.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class PamDgp:
    kind = "pam"
    features = "xw"

    def success_prob(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return (x * x + w * w + x * w) / 3.0

    def cost(self, x, w):
        return 1.0 - self.success_prob(x, w)

    def x_from_uniform(self, u):
        return np.asarray(u, dtype=float)

    def w_from_uniform(self, u):
        return np.asarray(u, dtype=float)

    def describe(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class LogisticDgp:
    a: float
    b: float
    c_coef: float
    d: float
    gamma: float
    beta_alpha: float = BETA_ALPHA
    beta_beta: float = BETA_BETA

    kind = "logistic"
    features = "xw_interaction"

    def index(self, x, w):
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        return self.a + self.b * x + self.c_coef * w + self.d * x * w

    def success_prob(self, x, w):
        return expit(self.index(x, w))

    def cost(self, x, w):
        # expit(-z) = 1 - expit(z) without cancellation
        return expit(-self.index(x, w))

    def x_from_uniform(self, u):
        return beta_ppf(u, self.beta_alpha, self.beta_beta)

    def w_from_uniform(self, u):
        return normal_ppf(u)

    def anchor_residuals(self) -> np.ndarray:
        """Deviations of the four calibration targets, in probability units."""
        p = self.success_prob
        gap_low = p(0.2, 1.0) - p(0.2, 0.0)
        gap_high = p(0.4, 1.0) - p(0.4, 0.0)
        return np.array([
            p(0.2, 0.0) - 0.20,
            p(0.4, 0.0) - 0.40,
            gap_low - 0.02,
            gap_high - gap_low - self.gamma,
        ])

    def describe(self) -> dict:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "a": self.a,
            "b": self.b,
            "c": self.c_coef,
            "d": self.d,
            "beta_alpha": self.beta_alpha,
            "beta_beta": self.beta_beta,
        }


def calibrate_logistic(gamma: float) -> LogisticDgp:
    """Solve for the logit coefficients that hit the four calibration anchors.

    The anchors are ``p(0.2, 0) = 0.20``, ``p(0.4, 0) = 0.40``,
    ``p(0.2, 1) = 0.22`` and ``p(0.4, 1) = 0.42 + gamma``; on the logit scale
    they are linear in ``(a, b, c, d)``.
    """
    top = 0.42 + gamma
    if not (0.0 < top < 1.0):
        raise InvalidInputError(f"gamma={gamma} puts p(0.4, 1) = {top} outside (0, 1)")
    low0, high0 = logit(0.20), logit(0.40)
    low1, high1 = logit(0.22), logit(top)
    b = (high0 - low0) / 0.2
    a = low0 - 0.2 * b
    d = ((high1 - high0) - (low1 - low0)) / 0.2
    c = (low1 - low0) - 0.2 * d
    dgp = LogisticDgp(a=float(a), b=float(b), c_coef=float(c), d=float(d), gamma=float(gamma))
    worst = np.abs(dgp.anchor_residuals()).max()
    if worst > CALIBRATION_TOL:
        raise ArithmeticError(f"calibration residual {worst:.3g} exceeds {CALIBRATION_TOL}")
    return dgp


def dgp_from_description(d: dict):
    if d["kind"] == "pam":
        return PamDgp()
    if d["kind"] == "logistic":
        return calibrate_logistic(float(d["gamma"]))
    raise InvalidInputError(f"unknown dgp kind {d['kind']!r}")


@dataclass(frozen=True)
class TrainingSample:
    x: np.ndarray
    w: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not (len(self.x) == len(self.w) == len(self.y)):
            raise InvalidInputError("x, w and y must have equal length")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise InvalidInputError("y must be binary")

    def __len__(self):
        return len(self.y)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["x", "w", "y"])
            for x, w, y in zip(self.x.tolist(), self.w.tolist(), self.y.tolist()):
                writer.writerow([repr(x), repr(w), int(y)])

    @classmethod
    def from_csv(cls, path) -> "TrainingSample":
        data = np.genfromtxt(path, delimiter=",", names=True)
        return cls(
            np.asarray(data["x"], dtype=float),
            np.asarray(data["w"], dtype=float),
            np.asarray(data["y"], dtype=np.int8),
        )


def generate_training_sample(dgp, N: int, seed: int) -> TrainingSample:
    """Draw ``N`` past matches ``(x, w, y)`` with independent sides.

    ``x`` and ``w`` come from inverse-CDF transforms of Philox uniforms and
    ``y = 1`` with probability ``c(x, w)``.
    """
    if N < 1:
        raise InvalidInputError(f"N must be >= 1, got {N}")
    rng = make_generator(seed, "training-sample")
    x = dgp.x_from_uniform(rng.random(N))
    w = dgp.w_from_uniform(rng.random(N))
    y = (rng.random(N) < dgp.cost(x, w)).astype(np.int8)
    return TrainingSample(x, w, y)


def feature_matrix(x, w, features: str) -> np.ndarray:
    x = np.asarray(x, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if features == "xw":
        return np.column_stack([x, w])
    if features == "xw_interaction":
        return np.column_stack([x, w, x * w])
    raise InvalidInputError(f"unknown feature set {features!r}")


@dataclass
class CostEstimator:
    """Fitted cost surface ``c_hat(x, w)`` clipped to ``[0, c_bar]``."""

    model: object
    features: str = "xw"
    c_bar: float = 1.0
    metadata: dict = field(default_factory=dict)

    def predict(self, x, w) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        w = np.asarray(w, dtype=float)
        shape = np.broadcast(x, w).shape
        xb, wb = np.broadcast_arrays(x, w)
        raw = self.model.predict(feature_matrix(xb, wb, self.features))
        return np.clip(raw, 0.0, self.c_bar).reshape(shape)

    def cost_grid(self, x_values, w_values) -> np.ndarray:
        """Matrix of predictions for every pair ``(x_i, w_j)``."""
        xx, ww = np.meshgrid(np.asarray(x_values), np.asarray(w_values), indexing="ij")
        return self.predict(xx, ww)

    def to_dict(self) -> dict:
        return {
            "format": ESTIMATOR_FORMAT,
            "version": ESTIMATOR_FORMAT_VERSION,
            "library_version": __version__,
            "features": self.features,
            "c_bar": self.c_bar,
            "metadata": self.metadata,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CostEstimator":
        if d.get("format") != ESTIMATOR_FORMAT or d.get("version") != ESTIMATOR_FORMAT_VERSION:
            raise InvalidInputError("not a version-1 matchopt cost estimator")
        return cls(model_from_dict(d["model"]), d["features"], float(d["c_bar"]), dict(d["metadata"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "CostEstimator":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class TrueCost:
    """Adapter exposing a DGP's true cost through the estimator interface."""

    def __init__(self, dgp, c_bar: float = 1.0):
        self.dgp = dgp
        self.c_bar = c_bar

    def predict(self, x, w):
        return np.asarray(self.dgp.cost(x, w), dtype=float)

    def cost_grid(self, x_values, w_values):
        xx, ww = np.meshgrid(np.asarray(x_values), np.asarray(w_values), indexing="ij")
        return self.predict(xx, ww)


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "gbt"
    n_rounds: int = 200
    learning_rate: float = 0.1
    max_depth: int = 2
    min_leaf: int | None = None
    max_bins: int = 256
    n_bins: int = 20

    def build(self):
        if self.kind == "gbt":
            return GradientBoostedTrees(
                n_rounds=self.n_rounds,
                learning_rate=self.learning_rate,
                max_depth=self.max_depth,
                min_leaf=self.min_leaf,
                max_bins=self.max_bins,
            )
        if self.kind == "binned_mean":
            return BinnedMeanEstimator(n_bins=self.n_bins)
        raise InvalidInputError(f"unknown estimator kind {self.kind!r}")


def fit_cost_estimator(
    sample: TrainingSample,
    config: EstimatorConfig | None = None,
    features: str = "xw",
    c_bar: float = 1.0,
) -> CostEstimator:
    """Least-squares regression of ``y`` on the chosen features.

    Samples without covariate variation yield a constant estimator at the
    mean outcome.
    """
    config = config or EstimatorConfig()
    X = feature_matrix(sample.x, sample.w, features)
    y = np.asarray(sample.y, dtype=float)
    metadata = {"N": len(sample), "estimator": config.kind, "params": vars(config).copy()}
    if np.all(X == X[0]):
        return CostEstimator(ConstantModel(y.mean()), features, c_bar, metadata)
    return CostEstimator(config.build().fit(X, y), features, c_bar, metadata)


@dataclass(frozen=True)
class ErrorEstimate:
    l1: float
    l2: float
    l1_se: float
    l2_se: float
    draws: int


def estimator_error(est, dgp, mc_draws: int = 100_000, seed: int = 0) -> ErrorEstimate:
    """Monte Carlo L1 and L2 distances between ``est`` and the true cost under ``mu x nu``."""
    if mc_draws < 1:
        raise InvalidInputError("mc_draws must be >= 1")
    rng = make_generator(seed, "estimator-error")
    x = dgp.x_from_uniform(rng.random(mc_draws))
    w = dgp.w_from_uniform(rng.random(mc_draws))
    diff = np.asarray(est.predict(x, w), dtype=float) - dgp.cost(x, w)
    abs_diff = np.abs(diff)
    sq = diff * diff
    l1 = float(abs_diff.mean())
    l2 = float(np.sqrt(sq.mean()))
    denom = np.sqrt(mc_draws)
    l1_se = float(abs_diff.std() / denom)
    # Delta method for the square root of the mean squared error.
    l2_se = float(sq.std() / denom / (2.0 * l2)) if l2 > 0 else 0.0
    return ErrorEstimate(l1, l2, l1_se, l2_se, mc_draws)
