"""Parameter-holding layers.

Parameters are enumerated in registration order (attribute assignment
order, depth first), which fixes the order used by the optimizer, the
model container and gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ShapeError
from . import ops
from .tensor import Tensor


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Module:
    """Base class: tracks child modules and parameters in assignment order."""

    trainable = True

    def __setattr__(self, name, value):
        if isinstance(value, (Module, Tensor)) or (
            isinstance(value, (list, dict)) and value
            and all(isinstance(v, Module) for v in (value.values() if isinstance(value, dict) else value))
        ):
            self.__dict__.setdefault("_children", []).append(name)
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix=""):
        out = []
        for name in self.__dict__.get("_children", []):
            value = getattr(self, name)
            full = f"{prefix}{name}"
            if isinstance(value, Tensor):
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            else:
                items = value.items() if isinstance(value, dict) else enumerate(value)
                for key, child in items:
                    out.extend(child.named_parameters(f"{full}.{key}."))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def num_parameters(self):
        return int(np.sum([p.size for p in self.parameters() if p.requires_grad], dtype=np.int64))


def _param(data, name):
    return Tensor(data, requires_grad=True, name=name)


class Dense(Module):
    def __init__(self, in_dim, units, activation="linear", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.units, self.activation = in_dim, units, activation
        self.W = _param(glorot_uniform(rng, (units, in_dim), in_dim, units), "W")
        self.b = _param(np.zeros(units), "b")

    def __call__(self, x):
        return ops.dense(x, self.W, self.b, self.activation)

    def __repr__(self):
        return f"Dense({self.in_dim}->{self.units}, {self.activation})"


class Conv1D(Module):
    def __init__(self, in_channels, filters, kernel_size, activation="linear", padding="valid", rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_channels, self.filters, self.kernel_size = in_channels, filters, kernel_size
        self.activation, self.padding = activation, padding
        self.kernels = _param(
            glorot_uniform(rng, (filters, kernel_size, in_channels),
                           kernel_size * in_channels, kernel_size * filters),
            "kernels",
        )
        self.b = _param(np.zeros(filters), "b")

    def __call__(self, x):
        return ops.conv1d(x, self.kernels, self.b, self.activation, self.padding)

    def __repr__(self):
        return f"Conv1D({self.in_channels}->{self.filters}, k={self.kernel_size}, {self.padding}, {self.activation})"


@dataclass
class GruParams:
    """The six bias-free GRU matrices: ``W*`` are ``E x F``, ``U*`` are ``E x E``."""

    Wc: Tensor
    Wr: Tensor
    W: Tensor
    Uc: Tensor
    Ur: Tensor
    U: Tensor

    def __post_init__(self):
        E, F = self.Wc.shape
        for name in ("Wr", "W"):
            if getattr(self, name).shape != (E, F):
                raise ShapeError(f"{name} must be {E}x{F}, got {getattr(self, name).shape}")
        for name in ("Uc", "Ur", "U"):
            if getattr(self, name).shape != (E, E):
                raise ShapeError(f"{name} must be {E}x{E}, got {getattr(self, name).shape}")

    @property
    def hidden(self):
        return self.Wc.shape[0]

    @property
    def features(self):
        return self.Wc.shape[1]


class GRU(Module):
    """GRU layer; ``return_sequences=False`` yields only the final state."""

    def __init__(self, in_dim, units, return_sequences=True, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.units, self.return_sequences = in_dim, units, return_sequences
        for name in ("Wc", "Wr", "W"):
            setattr(self, name, _param(glorot_uniform(rng, (units, in_dim), in_dim, units), name))
        for name in ("Uc", "Ur", "U"):
            setattr(self, name, _param(glorot_uniform(rng, (units, units), units, units), name))

    @property
    def params(self):
        return GruParams(self.Wc, self.Wr, self.W, self.Uc, self.Ur, self.U)

    def __call__(self, x, mask=None):
        seq = ops.gru_sequence(x, self.params, mask)
        if self.return_sequences:
            return seq
        return seq[..., -1, :]

    def __repr__(self):
        return f"GRU({self.in_dim}->{self.units}, return_sequences={self.return_sequences})"


class Embedding(Module):
    def __init__(self, vocab_size, dim, mask_value=None, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab_size, self.dim, self.mask_value = vocab_size, dim, mask_value
        self.table = _param(rng.uniform(-0.05, 0.05, size=(vocab_size, dim)), "table")

    def __call__(self, tokens):
        return ops.embedding(tokens, self.table, self.mask_value)

    def __repr__(self):
        return f"Embedding({self.vocab_size}, {self.dim}, mask_value={self.mask_value})"


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def __call__(self, x):
        for layer in self.layers:
            x = layer(x)
        return x
