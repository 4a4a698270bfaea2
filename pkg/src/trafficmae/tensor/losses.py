from __future__ import annotations

import numpy as np

from ..errors import ArgumentError, ShapeError
from . import ops
from .tensor import as_tensor

CE_EPSILON = 1e-12


def mse(y, y_hat, mask=None):
    """Mean squared error over all elements.

    With a boolean ``mask`` broadcastable to ``y``, only unmasked elements
    count and the mean is taken over them (zero when nothing is unmasked).
    """
    y, y_hat = as_tensor(y), as_tensor(y_hat)
    if y.shape != y_hat.shape:
        raise ShapeError(f"target shape {y.shape} != prediction shape {y_hat.shape}")
    diff = ops.sub(y_hat, y)
    if mask is None:
        return ops.mean(ops.square(diff))
    m = np.broadcast_to(np.asarray(mask, dtype=float), y.shape)
    count = m.sum()
    return ops.mul(ops.sum(ops.mul(ops.square(diff), m)), 1.0 / max(count, 1.0))


def proportional_weights(feature_counts):
    """``w_i = n_i / sum_j n_j``."""
    counts = np.asarray(feature_counts, dtype=float)
    if counts.size == 0 or np.any(counts <= 0):
        raise ArgumentError("feature counts must be positive")
    return counts / counts.sum()


def weighted_mse(parts):
    """``sum_i w_i * MSE_i`` for ``parts`` of ``(y, y_hat, weight)`` or ``(y, y_hat, weight, mask)``."""
    if not parts:
        raise ArgumentError("weighted MSE needs at least one part")
    weights = np.array([p[2] for p in parts], dtype=float)
    if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
        raise ArgumentError(f"weights must be non-negative and sum to 1, got {weights.tolist()}")
    total = None
    for part in parts:
        y, y_hat, w = part[:3]
        mask = part[3] if len(part) > 3 else None
        term = ops.mul(mse(y, y_hat, mask), float(w))
        total = term if total is None else ops.add(total, term)
    return total


def categorical_ce(probs, labels, class_weights=None):
    """Mean of ``-class_weights[label] * log(max(p[label], eps))`` over the batch.

    ``probs`` is ``[C]`` with a scalar label or ``[B, C]`` with ``B`` labels.
    """
    probs = as_tensor(probs)
    single = probs.ndim == 1
    if single:
        probs = ops.reshape(probs, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    B, C = probs.shape
    if labels.shape != (B,):
        raise ShapeError(f"{labels.shape[0]} labels for {B} probability rows")
    weights = np.ones(C) if class_weights is None else np.asarray(class_weights, dtype=float)
    picked = ops.getitem(probs, (np.arange(B), labels))
    logp = ops.log(picked, eps=CE_EPSILON)
    return ops.mul(ops.sum(ops.mul(logp, weights[labels])), -1.0 / B)
