"""Cosine-distance neighbor methods: k-NN classification and neighborhood purity."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError, ShapeError

log = logging.getLogger(__name__)


def _unit_rows(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ShapeError(f"expected a matrix, got shape {X.shape}")
    norms = np.linalg.norm(X, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return X / safe[:, None], norms


def cosine_distances(A, B):
    """``1 - cos(a, b)`` for every pair of rows; zero-norm rows are at distance 1."""
    ua, _ = _unit_rows(A)
    ub, _ = _unit_rows(B)
    return 1.0 - ua @ ub.T


def _neighbor_order(dist):
    # nearest first; equal distances keep index order
    return np.argsort(dist, axis=1, kind="stable")


def knn_classify(X_train, y_train, X_test, K=7):
    """Majority vote over the ``K`` cosine-nearest training points.

    A tie between classes goes to whichever tied class appears first in
    the neighbor list (i.e. holds the nearest neighbor among them).
    """
    y_train = list(y_train)
    if len(y_train) == 0:
        raise ArgumentError("k-NN needs a non-empty training set")
    if not 1 <= K <= len(y_train):
        raise ArgumentError(f"K={K} must lie in [1, {len(y_train)}]")
    X_test = np.asarray(X_test, dtype=float)
    if X_test.shape[0] == 0:
        return []
    preds = []
    for start in range(0, X_test.shape[0], 1024):
        order = _neighbor_order(cosine_distances(X_test[start:start + 1024], X_train))[:, :K]
        for row in order:
            labels = [y_train[j] for j in row]
            votes = Counter(labels)
            top = max(votes.values())
            preds.append(next(lab for lab in labels if votes[lab] == top))
    return preds


@dataclass
class PurityCurve:
    ks: list
    values: list
    metric: str = "cosine"
    excluded: int = 0

    def to_rows(self):
        return [(k, v) for k, v in zip(self.ks, self.values)]


def _purity_setup(embeddings, labels):
    X = np.asarray(embeddings, dtype=float)
    labels = np.asarray(list(labels), dtype=object)
    if X.ndim != 2 or X.shape[0] != labels.size:
        raise ShapeError(f"{labels.size} labels for embeddings of shape {X.shape}")
    U, norms = _unit_rows(X)
    keep = norms > 0
    if not keep.all():
        log.warning("excluding %d zero-norm embeddings from neighbor purity", int((~keep).sum()))
    return U[keep], labels[keep], int((~keep).sum())


def _same_class_fractions(U, labels, kmax):
    """Per sample, cumulative same-class counts over its first ``kmax`` neighbors (self excluded)."""
    S = U.shape[0]
    codes = np.unique(labels, return_inverse=True)[1]
    hits = np.zeros((S, kmax))
    for start in range(0, S, 1024):
        rows = np.arange(start, min(S, start + 1024))
        dist = 1.0 - U[rows] @ U.T
        dist[np.arange(rows.size), rows] = np.inf  # a sample is never its own neighbor
        order = _neighbor_order(dist)[:, :kmax]
        hits[rows] = np.cumsum(codes[order] == codes[rows][:, None], axis=1)
    return hits, codes


def _macro(per_sample, codes):
    return float(np.mean([per_sample[codes == c].mean() for c in np.unique(codes)]))


def knn_class_probability(embeddings, labels, K):
    """Macro-averaged fraction of each sample's ``K`` cosine neighbors sharing its class.

    Averaged first over the samples of each class, then over classes.
    Zero-norm embeddings are excluded (with a warning).
    """
    return purity_curve(embeddings, labels, [K]).values[0]


def purity_curve(embeddings, labels, ks):
    ks = [int(k) for k in ks]
    U, lab, excluded = _purity_setup(embeddings, labels)
    S = U.shape[0]
    for k in ks:
        if k < 1 or k >= S:
            raise ArgumentError(f"K={k} must satisfy 1 <= K < {S} (number of usable samples)")
    hits, codes = _same_class_fractions(U, lab, max(ks))
    values = [_macro(hits[:, k - 1] / k, codes) for k in ks]
    return PurityCurve(ks, values, "cosine", excluded)
