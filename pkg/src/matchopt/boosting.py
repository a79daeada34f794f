"""Small regression models used to estimate match costs.

:class:`GradientBoostedTrees` is a histogram-based least-squares booster:
features are cut at sample quantiles once, each tree is grown level by level
from per-bin residual sums, and leaves shrink the mean residual by the
learning rate. :class:`BinnedMeanEstimator` averages the target within a 2-d
grid of quantile cells and is simple enough to check by hand.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def quantile_edges(values: np.ndarray, max_bins: int) -> np.ndarray:
    """Distinct interior cut points at the sample quantiles."""
    levels = np.arange(1, max_bins) / max_bins
    edges = np.unique(np.quantile(values, levels, method="linear"))
    # A cut equal to the minimum would leave the left side empty.
    return edges[edges > values.min()]


@dataclass
class Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.value) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        while True:
            internal = feature[node] >= 0
            if not internal.any():
                break
            idx = np.flatnonzero(internal)
            cur = node[idx]
            go_left = X[idx, feature[cur]] < threshold[cur]
            node[idx] = np.where(go_left, left[cur], right[cur])
        return np.asarray(self.value)[node]

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(**{k: list(v) for k, v in d.items()})


class GradientBoostedTrees:
    """Least-squares gradient boosting with shallow histogram trees.

    Parameters
    ----------
    n_rounds : int
        Number of trees.
    learning_rate : float
        Shrinkage applied to every leaf value.
    max_depth : int
        Depth of each tree (2 gives at most four leaves).
    min_leaf : int or None
        Minimum rows per leaf; ``None`` means ``max(20, N // 1000)``.
    max_bins : int
        Number of quantile bins per feature.
    """

    def __init__(self, n_rounds=200, learning_rate=0.1, max_depth=2, min_leaf=None, max_bins=256):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.max_bins = max_bins
        self.base_score = 0.0
        self.trees: list[Tree] = []

    def get_params(self) -> dict:
        return {
            "n_rounds": self.n_rounds,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
            "max_bins": self.max_bins,
        }

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n_rows, n_features = X.shape
        min_leaf = self.min_leaf if self.min_leaf is not None else max(20, n_rows // 1000)
        edges = [quantile_edges(X[:, k], self.max_bins) for k in range(n_features)]
        bins = [np.searchsorted(e, X[:, k], side="right").astype(np.intp) for k, e in enumerate(edges)]
        n_bins = [e.size + 1 for e in edges]
        root_counts = [np.bincount(b, minlength=nb) for b, nb in zip(bins, n_bins)]

        self.base_score = float(y.mean())
        self.trees = []
        pred = np.full(n_rows, self.base_score)
        for _ in range(self.n_rounds):
            tree, step = self._grow(bins, n_bins, edges, y - pred, min_leaf, root_counts)
            pred += step
            self.trees.append(tree)
        return self

    def _grow(self, bins, n_bins, edges, resid, min_leaf, root_counts):
        """Grow one complete tree of depth ``max_depth`` on the residuals.

        Nodes that find no admissible split get a pass-through split
        (threshold ``+inf``) so that every level is full and rows can be
        routed by ``slot = 2 * slot + went_right``.
        """
        n_rows = resid.size
        slot = np.zeros(n_rows, dtype=np.intp)
        levels = []
        for depth in range(self.max_depth):
            n_open = 1 << depth
            best_gain = np.zeros(n_open)
            best_feature = np.zeros(n_open, dtype=np.intp)
            best_bin = np.array([n_bins[0] - 1] * n_open, dtype=np.intp)
            for k, (b, nb) in enumerate(zip(bins, n_bins)):
                if nb < 2:
                    continue
                if depth == 0:
                    sums = np.bincount(b, weights=resid, minlength=nb)[None, :]
                    counts = root_counts[k][None, :]
                else:
                    key = slot * nb + b
                    sums = np.bincount(key, weights=resid, minlength=n_open * nb).reshape(n_open, nb)
                    counts = np.bincount(key, minlength=n_open * nb).reshape(n_open, nb)
                left_sum = np.cumsum(sums, axis=1)[:, :-1]
                left_cnt = np.cumsum(counts, axis=1)[:, :-1]
                tot_sum = sums.sum(axis=1, keepdims=True)
                tot_cnt = counts.sum(axis=1, keepdims=True)
                right_sum = tot_sum - left_sum
                right_cnt = tot_cnt - left_cnt
                ok = (left_cnt >= min_leaf) & (right_cnt >= min_leaf)
                with np.errstate(divide="ignore", invalid="ignore"):
                    gain = left_sum**2 / left_cnt + right_sum**2 / right_cnt - tot_sum**2 / tot_cnt
                gain = np.where(ok, gain, -np.inf)
                arg = np.argmax(gain, axis=1)
                top = gain[np.arange(n_open), arg]
                better = top > best_gain
                best_gain[better] = top[better]
                best_feature[better] = k
                best_bin[better] = arg[better]
            split = best_gain > 0
            thresholds = np.full(n_open, np.inf)
            for s in np.flatnonzero(split):
                thresholds[s] = edges[best_feature[s]][best_bin[s]]
            levels.append((np.where(split, best_feature, 0), thresholds))
            went_right = np.zeros(n_rows, dtype=bool)
            for k in np.unique(best_feature[split]):
                cut = np.where(split & (best_feature == k), best_bin, n_bins[k])
                went_right |= bins[k] > cut[slot]
            slot = 2 * slot + went_right

        n_leaves = 1 << self.max_depth
        sums = np.bincount(slot, weights=resid, minlength=n_leaves)
        counts = np.bincount(slot, minlength=n_leaves)
        leaf_values = self.learning_rate * sums / np.maximum(counts, 1)

        tree = Tree()
        ids = [tree.add_node()]
        for feature, thresholds in levels:
            children = []
            for s, node in enumerate(ids):
                left, right = tree.add_node(), tree.add_node()
                tree.feature[node] = int(feature[s])
                tree.threshold[node] = float(thresholds[s])
                tree.left[node] = left
                tree.right[node] = right
                children += [left, right]
            ids = children
        for s, node in enumerate(ids):
            tree.value[node] = float(leaf_values[s])
        return tree, leaf_values[slot]

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            out += tree.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "kind": "gbt",
            "params": self.get_params(),
            "base_score": self.base_score,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradientBoostedTrees":
        model = cls(**d["params"])
        model.base_score = float(d["base_score"])
        model.trees = [Tree.from_dict(t) for t in d["trees"]]
        return model


class BinnedMeanEstimator:
    """Mean of the target within quantile cells of the first two features."""

    def __init__(self, n_bins=20):
        self.n_bins = n_bins
        self.edges: list[np.ndarray] = []
        self.table = np.zeros((1, 1))

    def get_params(self) -> dict:
        return {"n_bins": self.n_bins}

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)[:, :2]
        y = np.asarray(y, dtype=float)
        self.edges = [quantile_edges(X[:, k], self.n_bins) for k in range(2)]
        ix, iw = self._cells(X)
        shape = (self.edges[0].size + 1, self.edges[1].size + 1)
        flat = np.ravel_multi_index((ix, iw), shape)
        sums = np.bincount(flat, weights=y, minlength=shape[0] * shape[1])
        counts = np.bincount(flat, minlength=shape[0] * shape[1])
        table = np.full(sums.shape, y.mean())
        filled = counts > 0
        table[filled] = sums[filled] / counts[filled]
        self.table = table.reshape(shape)
        return self

    def _cells(self, X):
        return tuple(np.searchsorted(e, X[:, k], side="right") for k, e in enumerate(self.edges))

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)[:, :2]
        return self.table[self._cells(X)]

    def to_dict(self) -> dict:
        return {
            "kind": "binned_mean",
            "params": self.get_params(),
            "edges": [e.tolist() for e in self.edges],
            "table": self.table.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BinnedMeanEstimator":
        model = cls(**d["params"])
        model.edges = [np.asarray(e, dtype=float) for e in d["edges"]]
        model.table = np.asarray(d["table"], dtype=float)
        return model


class ConstantModel:
    def __init__(self, value: float):
        self.value = float(value)

    def predict(self, X) -> np.ndarray:
        return np.full(np.asarray(X).shape[0], self.value)

    def to_dict(self) -> dict:
        return {"kind": "constant", "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "ConstantModel":
        return cls(d["value"])


MODEL_KINDS = {
    "gbt": GradientBoostedTrees,
    "binned_mean": BinnedMeanEstimator,
    "constant": ConstantModel,
}


def model_from_dict(d: dict):
    return MODEL_KINDS[d["kind"]].from_dict(d)
