"""Downstream MLP classifier (two hidden layers with dropout, class-balanced CE)."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..errors import ArgumentError, ConfigError
from ..tensor import ops
from ..tensor.layers import Dense, Module
from ..tensor.losses import categorical_ce
from ..tensor.optim import Adam
from ..tensor.tensor import Tensor, backward
from .metrics import f1_scores


@dataclass
class MLPConfig:
    hidden: tuple = (512, 256)
    dropout: float = 0.3
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    class_balance: bool = True
    standardize: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden layer widths must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    @classmethod
    def from_dict(cls, obj):
        obj = dict(obj or {})
        extra = set(obj) - {f.name for f in fields(cls)}
        if extra:
            raise ConfigError(f"unknown MLP config fields: {sorted(extra)}")
        return cls(**obj)

    def to_dict(self):
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def class_weights(y, n_classes):
    """Inverse-frequency weights normalized to mean 1 over the classes present.

    Classes missing from ``y`` get weight 0 (they never appear in the loss).
    """
    counts = np.bincount(np.asarray(y, dtype=int), minlength=n_classes).astype(float)
    present = counts > 0
    w = np.zeros(n_classes)
    w[present] = 1.0 / counts[present]
    return w * present.sum() / w.sum()


class MLPClassifier(Module):
    """Dense(512, relu) -> Dropout -> Dense(256, relu) -> Dropout -> Dense(C, softmax)."""

    def __init__(self, in_dim, classes, config=None, seed=0):
        self.config = config or MLPConfig()
        if in_dim < 1:
            raise ArgumentError("input dimension must be >= 1")
        if len(classes) < 2:
            raise ArgumentError("a classifier needs at least two classes")
        self.classes = list(classes)
        self.in_dim = int(in_dim)
        self.seed = seed
        rng = np.random.default_rng(seed)
        widths = (in_dim,) + self.config.hidden
        self.hidden_layers = [Dense(a, b, "relu", rng) for a, b in zip(widths[:-1], widths[1:])]
        self.output = Dense(widths[-1], len(classes), "softmax", rng)
        self.mean = np.zeros(in_dim)
        self.scale = np.ones(in_dim)

    def _forward(self, X, training=False, rng=None):
        h = Tensor((X - self.mean) / self.scale)
        for layer in self.hidden_layers:
            h = ops.dropout(layer(h), self.config.dropout, rng, training)
        return self.output(h)

    def fit(self, X, y):
        """Train on ``X`` and labels ``y`` (values from ``classes``)."""
        X = np.asarray(X, dtype=float)
        index = {c: i for i, c in enumerate(self.classes)}
        yi = np.array([index[v] for v in y], dtype=int)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ArgumentError(f"expected inputs of width {self.in_dim}, got shape {X.shape}")
        if self.config.standardize:
            self.mean = X.mean(axis=0)
            std = X.std(axis=0)
            self.scale = np.where(std < 1e-9, 1.0, std)
        weights = class_weights(yi, len(self.classes)) if self.config.class_balance else None
        rng = np.random.default_rng([self.seed, 1])
        opt = Adam(self.parameters(), lr=self.config.lr)
        n = X.shape[0]
        self.history = []
        for _ in range(self.config.epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.config.batch_size):
                idx = order[start:start + self.config.batch_size]
                loss = categorical_ce(self._forward(X[idx], True, rng), yi[idx], weights)
                opt.zero_grad()
                backward(loss)
                opt.step()
                total += float(loss.data) * idx.size
            self.history.append(total / n)
        return self

    def predict_proba(self, X):
        return self._forward(np.asarray(X, dtype=float)).data

    def predict(self, X):
        return [self.classes[i] for i in np.argmax(self.predict_proba(X), axis=1)]


def mlp_trainables(in_dim, n_classes, hidden=(512, 256)):
    """Closed-form weight + bias count of the downstream MLP."""
    widths = (in_dim,) + tuple(hidden) + (n_classes,)
    return int(sum(a * b + b for a, b in zip(widths[:-1], widths[1:])))


def count_trainables(obj):
    """Trainable scalar count of a model (frozen tensors excluded)."""
    if hasattr(obj, "num_parameters"):
        return obj.num_parameters()
    if hasattr(obj, "trainables"):
        return int(obj.trainables)
    raise ArgumentError(f"cannot count trainables of {type(obj).__name__}")


def train_mlp_classifier(X, y, config=None, seed=0, X_test=None, y_test=None, classes=None):
    """Fit an :class:`MLPClassifier`; the report scores ``(X_test, y_test)`` when given, else the training data."""
    y = list(y)
    classes = sorted(set(y) if classes is None else set(classes), key=str)
    if len(set(y)) < 2:
        raise ArgumentError("training labels contain a single class")
    clf = MLPClassifier(np.shape(X)[1], classes, config, seed).fit(X, y)
    Xe, ye = (X, y) if X_test is None else (X_test, list(y_test))
    report = f1_scores(clf.predict(Xe), ye, clf.num_parameters())
    return clf, report
