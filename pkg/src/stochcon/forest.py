"""Random forest classifier built from scratch on Gini-impurity trees.

Trees grow on bootstrap resamples, each split searched over a random
sqrt(D) feature subset. Per-feature importance is the total impurity
decrease (weighted by node size), normalized per tree and averaged over
the forest, matching the usual Gini-importance convention. Everything is
deterministic given the seed: per-tree RNG streams are derived from
(seed, tree index), so results do not depend on fitting order.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .exceptions import ContractError
from .validation import check_X_y, check_array, check_is_fitted

__all__ = ["RandomForestClassifier"]


class _Node:
    __slots__ = ("feature", "threshold", "gain", "left", "right", "counts")

    def __init__(self, counts):
        self.feature = -1
        self.threshold = 0.0
        self.gain = 0.0
        self.left = None
        self.right = None
        self.counts = counts

    @property
    def is_leaf(self):
        return self.left is None


def _gini(counts: np.ndarray, n: int) -> float:
    return 1.0 - float((counts.astype(np.float64) ** 2).sum()) / (n * n)


def _best_split(X, y_onehot, idx, features, parent_gini):
    """Return (decrease, feature, threshold, left_mask) or None."""
    n = idx.size
    best = None
    best_score = -np.inf
    for f in features:
        vals = X[idx, f]
        order = np.argsort(vals, kind="stable")
        sv = vals[order]
        if sv[0] == sv[-1]:
            continue
        cum = np.cumsum(y_onehot[idx][order], axis=0)
        total = cum[-1]
        left = cum[:-1]
        right = total[None, :] - left
        k = np.arange(1, n, dtype=np.float64)
        # maximizing sum(l^2)/k + sum(r^2)/(n-k) minimizes weighted child Gini
        score = (left.astype(np.float64) ** 2).sum(axis=1) / k
        score += (right.astype(np.float64) ** 2).sum(axis=1) / (n - k)
        score[sv[1:] == sv[:-1]] = -np.inf
        pos = int(np.argmax(score))
        if score[pos] > best_score:
            best_score = score[pos]
            best = (f, 0.5 * (sv[pos] + sv[pos + 1]))
    if best is None:
        return None
    feature, threshold = best
    decrease = parent_gini - (n - best_score) / n
    left_mask = X[idx, feature] <= threshold
    if not left_mask.any() or left_mask.all():
        return None
    return decrease, feature, threshold, left_mask


class RandomForestClassifier(BaseEstimator, ClassifierMixin):
    """Bagged Gini trees with random feature subsets and Gini importances.

    Parameters follow sklearn conventions: they are stored verbatim in
    __init__ and validated in fit, so the estimator composes with
    pipelines, grid search, and cloning.
    """

    def __init__(self, n_trees=100, max_depth=12, max_features="sqrt",
                 min_samples_split=2, seed=0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.max_features = max_features
        self.min_samples_split = min_samples_split
        self.seed = seed

    def _n_subset_features(self, n_features: int) -> int:
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(n_features)))
        if self.max_features is None:
            return n_features
        return min(int(self.max_features), n_features)

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if X.shape[1] < 1:
            raise ContractError("empty feature set")
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        n_classes = self.classes_.size
        y_onehot = np.zeros((y_enc.size, n_classes), dtype=np.int64)
        y_onehot[np.arange(y_enc.size), y_enc] = 1

        self.trees_ = []
        importances = np.zeros(self.n_features_in_)
        for t in range(self.n_trees):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(self.seed), 31, t))))
            boot = rng.integers(0, X.shape[0], size=X.shape[0])
            tree_importance = np.zeros(self.n_features_in_)
            root = self._grow(X, y_onehot, boot, rng, depth=0, importance=tree_importance,
                              n_total=boot.size)
            self.trees_.append(root)
            total = tree_importance.sum()
            if total > 0:
                importances += tree_importance / total
        total = importances.sum()
        self.feature_importances_ = importances / total if total > 0 else importances
        return self

    def _grow(self, X, y_onehot, idx, rng, depth, importance, n_total):
        counts = y_onehot[idx].sum(axis=0)
        node = _Node(counts)
        n = idx.size
        if depth >= self.max_depth or n < self.min_samples_split or counts.max() == n:
            return node
        features = rng.choice(X.shape[1], size=self._n_subset_features(X.shape[1]), replace=False)
        parent_gini = _gini(counts, n)
        split = _best_split(X, y_onehot, idx, np.sort(features), parent_gini)
        if split is None or split[0] <= 0.0:
            return node
        decrease, feature, threshold, left_mask = split
        importance[feature] += (n / n_total) * decrease
        node.feature = int(feature)
        node.threshold = float(threshold)
        node.gain = float(decrease)
        node.left = self._grow(X, y_onehot, idx[left_mask], rng, depth + 1, importance, n_total)
        node.right = self._grow(X, y_onehot, idx[~left_mask], rng, depth + 1, importance, n_total)
        return node

    def _tree_proba(self, node, X, idx, out):
        if node.is_leaf:
            total = node.counts.sum()
            out[idx] = node.counts / total if total > 0 else 1.0 / out.shape[1]
            return
        left = X[idx, node.feature] <= node.threshold
        if left.any():
            self._tree_proba(node.left, X, idx[left], out)
        if not left.all():
            self._tree_proba(node.right, X, idx[~left], out)

    def predict_proba(self, X):
        check_is_fitted(self, "trees_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ContractError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        proba = np.zeros((X.shape[0], self.classes_.size))
        scratch = np.zeros_like(proba)
        everything = np.arange(X.shape[0])
        for tree in self.trees_:
            scratch[:] = 0.0
            self._tree_proba(tree, X, everything, scratch)
            proba += scratch
        return proba / len(self.trees_)

    def predict(self, X):
        # argmax takes the lowest class index on ties
        return self.classes_[self.predict_proba(X).argmax(axis=1)]
