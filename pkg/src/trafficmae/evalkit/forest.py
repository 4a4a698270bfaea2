"""Random forest of CART trees split on Gini impurity."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError


def gini(counts):
    """``1 - sum_c p_c^2`` of a class-count vector (0 for an empty node)."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(x, y_onehot):
    """Lowest weighted child Gini for one feature: ``(impurity, threshold)`` or None if constant."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    valid = np.flatnonzero(xs[:-1] < xs[1:])
    if valid.size == 0:
        return None
    left = np.cumsum(y_onehot[order], axis=0)[valid]  # class counts left of each cut
    total = y_onehot.sum(axis=0)
    right = total - left
    nl = (valid + 1).astype(float)
    nr = x.size - nl
    gl = 1.0 - np.sum((left / nl[:, None]) ** 2, axis=1)
    gr = 1.0 - np.sum((right / nr[:, None]) ** 2, axis=1)
    impurity = (nl * gl + nr * gr) / x.size
    best = int(np.argmin(impurity))
    i = valid[best]
    threshold = 0.5 * (xs[i] + xs[i + 1])
    if not xs[i] <= threshold < xs[i + 1]:
        threshold = xs[i]  # midpoint rounded onto the upper value
    return float(impurity[best]), float(threshold)


class DecisionTree:
    """CART classifier; class labels are integer codes ``0..n_classes-1``."""

    def __init__(self, n_classes, max_features=None, max_depth=None, min_samples_split=2, rng=None):
        self.n_classes = n_classes
        self.max_features = max_features
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        n, D = X.shape
        m = D if self.max_features is None else min(D, self.max_features)
        onehot = np.eye(self.n_classes)[y]
        feature, threshold, left, right, value = [], [], [], [], []

        def new_node(idx):
            counts = onehot[idx].sum(axis=0)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(int(np.argmax(counts)))
            return len(feature) - 1, counts

        root, counts = new_node(np.arange(n))
        stack = [(root, np.arange(n), counts, 0)]
        while stack:
            node, idx, counts, depth = stack.pop()
            if (np.count_nonzero(counts) <= 1 or idx.size < self.min_samples_split
                    or (self.max_depth is not None and depth >= self.max_depth)):
                continue
            # visit features in random order until m non-constant ones were tried
            best, tried = None, 0
            for f in self.rng.permutation(D):
                split = _best_split(X[idx, f], onehot[idx])
                if split is None:
                    continue
                tried += 1
                if best is None or split[0] < best[0]:
                    best = (split[0], split[1], int(f))
                if tried >= m:
                    break
            if best is None:
                continue
            _, thr, f = best
            go_left = X[idx, f] <= thr
            feature[node], threshold[node] = f, thr
            li, ri = idx[go_left], idx[~go_left]
            lnode, lcounts = new_node(li)
            rnode, rcounts = new_node(ri)
            left[node], right[node] = lnode, rnode
            stack.append((rnode, ri, rcounts, depth + 1))
            stack.append((lnode, li, lcounts, depth + 1))
        self.feature = np.array(feature)
        self.threshold = np.array(threshold)
        self.left = np.array(left)
        self.right = np.array(right)
        self.value = np.array(value)
        return self

    @property
    def n_nodes(self):
        return int(self.feature.size)

    def predict_codes(self, X):
        X = np.asarray(X, dtype=float)
        node = np.zeros(X.shape[0], dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            n = node[rows]
            goes_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(goes_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return self.value[node]


@dataclass
class ForestParams:
    n_trees: int = 100
    max_features: object = "sqrt"  # "sqrt", an int, or None for all features
    max_depth: int | None = None
    min_samples_split: int = 2
    bootstrap: bool = True
    seed: int = 0


class RandomForest:
    def __init__(self, params=None):
        self.params = params or ForestParams()

    def _max_features(self, D):
        mf = self.params.max_features
        if mf is None:
            return D
        if mf == "sqrt":
            return max(1, math.ceil(math.sqrt(D)))
        if isinstance(mf, int) and mf >= 1:
            return min(D, mf)
        raise ArgumentError(f"invalid max_features {mf!r}")

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = list(y)
        if X.ndim != 2 or X.shape[0] != len(y) or not y:
            raise ArgumentError(f"{len(y)} labels for a feature matrix of shape {X.shape}")
        self.classes = sorted(set(y), key=str)
        index = {c: i for i, c in enumerate(self.classes)}
        codes = np.array([index[v] for v in y])
        m = self._max_features(X.shape[1])
        self.trees = []
        for t in range(self.params.n_trees):
            rng = np.random.default_rng([self.params.seed, t])
            rows = rng.integers(0, len(y), len(y)) if self.params.bootstrap else np.arange(len(y))
            tree = DecisionTree(len(self.classes), m, self.params.max_depth, self.params.min_samples_split, rng)
            self.trees.append(tree.fit(X[rows], codes[rows]))
        return self

    def predict(self, X):
        """Hard majority vote; ties go to the class listed first in ``classes``."""
        X = np.asarray(X, dtype=float)
        votes = np.zeros((X.shape[0], len(self.classes)), dtype=int)
        for tree in self.trees:
            votes[np.arange(X.shape[0]), tree.predict_codes(X)] += 1
        return [self.classes[i] for i in np.argmax(votes, axis=1)]


def train_random_forest(X, y, params=None):
    return RandomForest(params).fit(X, y)
