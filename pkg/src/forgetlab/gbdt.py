"""Gradient-boosted decision trees for binary classification.

Small, deterministic, dependency-free booster used as the membership
attack model: shallow regression trees fit to the logistic-loss
negative gradient, Newton leaf values, shrinkage applied at fit time.
Exact greedy splits over all thresholds; no subsampling, so fitting is
fully deterministic regardless of the seed.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .validation import as_float_matrix, as_label_vector


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _best_split(x_col, residual, min_leaf):
    """Best threshold of one feature by squared-error gain.

    Returns (gain, threshold) or None when no split separates at least
    min_leaf samples per side.
    """
    n = len(residual)
    if n < 2 * min_leaf:
        return None
    order = np.argsort(x_col, kind="stable")
    xs = x_col[order]
    rs = residual[order]
    csum = np.cumsum(rs)
    total = csum[-1]

    k = np.arange(min_leaf - 1, n - min_leaf)
    if len(k) == 0:
        return None
    distinct = xs[k] < xs[k + 1]
    if not np.any(distinct):
        return None
    k = k[distinct]
    left = csum[k]
    n_left = (k + 1).astype(np.float64)
    n_right = n - n_left
    gain = left * left / n_left + (total - left) ** 2 / n_right - total * total / n
    best = int(np.argmax(gain))
    if gain[best] <= 1e-12:
        return None
    pos = k[best]
    return float(gain[best]), float(0.5 * (xs[pos] + xs[pos + 1]))


class _Tree:
    """Complete-binary-tree arrays; children of node i sit at 2i+1, 2i+2."""

    def __init__(self, max_depth):
        n_nodes = 2 ** (max_depth + 1) - 1
        self.max_depth = max_depth
        self.feature = np.full(n_nodes, -1, dtype=np.int64)
        self.threshold = np.zeros(n_nodes)
        self.value = np.zeros(n_nodes)

    def predict(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        for _ in range(self.max_depth):
            feat = self.feature[node]
            internal = feat >= 0
            if not np.any(internal):
                break
            go_right = np.zeros(len(X), dtype=bool)
            rows = np.flatnonzero(internal)
            go_right[rows] = X[rows, feat[rows]] > self.threshold[node[rows]]
            node = np.where(internal, 2 * node + 1 + go_right, node)
        return self.value[node]


def _fit_tree(X, residual, hessian, max_depth, min_leaf, shrinkage):
    """Greedy least-squares tree on the residuals with Newton leaves."""
    tree = _Tree(max_depth)

    def leaf_value(idx):
        denom = hessian[idx].sum()
        if denom < 1e-12:
            return 0.0
        return shrinkage * residual[idx].sum() / denom

    stack = [(0, np.arange(len(residual)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        split = None
        if depth < max_depth and len(idx) >= 2 * min_leaf:
            best_gain = -np.inf
            for j in range(X.shape[1]):
                found = _best_split(X[idx, j], residual[idx], min_leaf)
                if found is not None and found[0] > best_gain:
                    best_gain, split = found[0], (j, found[1])
        if split is None:
            tree.value[node] = leaf_value(idx)
            continue
        j, thr = split
        tree.feature[node] = j
        tree.threshold[node] = thr
        left = idx[X[idx, j] <= thr]
        right = idx[X[idx, j] > thr]
        stack.append((2 * node + 2, right, depth + 1))
        stack.append((2 * node + 1, left, depth + 1))
    return tree


class GradientBoostingBinaryClassifier(BaseEstimator, ClassifierMixin):
    """Boosted shallow trees with logistic loss.

    Parameters mirror the usual boosting knobs; `random_state` is
    accepted for interface uniformity but the exact greedy fit is
    deterministic without it.
    """

    def __init__(self, n_estimators=100, learning_rate=0.1, max_depth=2,
                 min_samples_leaf=5, random_state=0):
        self.n_estimators = n_estimators
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state

    def fit(self, X, y):
        X = as_float_matrix(X)
        y = as_label_vector(y, n_classes=2, name="y")
        if len(y) != len(X):
            raise ValueError("X and y must have matching length")
        if self.n_estimators < 1 or self.learning_rate <= 0:
            raise ValueError("need n_estimators >= 1 and learning_rate > 0")
        counts = np.bincount(y, minlength=2)
        if counts.min() == 0:
            raise ValueError("training data must contain both classes")

        prior = float(np.clip(y.mean(), 1e-6, 1.0 - 1e-6))
        self.base_score_ = float(np.log(prior / (1.0 - prior)))
        self.trees_ = []
        F = np.full(len(y), self.base_score_)
        target = y.astype(np.float64)
        for _ in range(self.n_estimators):
            p = _sigmoid(F)
            residual = target - p
            hessian = p * (1.0 - p)
            tree = _fit_tree(X, residual, hessian, self.max_depth,
                             self.min_samples_leaf, self.learning_rate)
            F += tree.predict(X)
            self.trees_.append(tree)
        self.n_features_in_ = X.shape[1]
        self.classes_ = np.array([0, 1])
        return self

    def _check_fitted(self):
        if not hasattr(self, "trees_"):
            raise NotFittedError("classifier has not been fitted")

    def decision_function(self, X):
        self._check_fitted()
        X = as_float_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, "
                             f"fitted on {self.n_features_in_}")
        F = np.full(len(X), self.base_score_)
        for tree in self.trees_:
            F += tree.predict(X)
        return F

    def predict_proba(self, X):
        p = _sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(np.int64)
