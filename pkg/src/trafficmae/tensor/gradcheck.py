"""Central finite-difference gradient checking."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import grad


def _coordinates(analytic, max_coords, rng):
    """All indices, or ``max_coords`` of them: half from the gradient's support, half uniform."""
    size = analytic.size
    if max_coords is None or size <= max_coords:
        return np.arange(size)
    support = np.flatnonzero(analytic.reshape(-1))
    k = min(len(support), (max_coords + 1) // 2)
    picked = rng.choice(support, size=k, replace=False) if k else np.array([], dtype=int)
    rest = np.setdiff1d(np.arange(size), picked)
    picked = np.concatenate([picked, rng.choice(rest, size=max_coords - k, replace=False)])
    return np.sort(picked.astype(int))


def activation_pattern(fn):
    """Digest of every ReLU sign and max-pool winner touched by ``fn()``."""
    ops._pattern_log = []
    try:
        fn()
        return hashlib.sha256(b"".join(ops._pattern_log)).digest()
    finally:
        ops._pattern_log = None


def numerical_gradient(fn, tensors, step=1e-3, coords=None):
    """Central differences of the scalar ``fn()`` w.r.t. each tensor's data.

    ``coords`` optionally restricts each tensor to a list of flat indices;
    the returned arrays then hold only those entries.
    """
    out = []
    for i, t in enumerate(tensors):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size) if coords is None else coords[i]
        g = np.zeros(len(idx))
        for j, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + step
            up = float(fn().data)
            flat[k] = orig - step
            down = float(fn().data)
            flat[k] = orig
            g[j] = (up - down) / (2.0 * step)
        out.append(g.reshape(t.shape) if coords is None else g)
    return out


def relative_error(analytic, numeric):
    """Max over arrays of ``max|a - n| / max(max|a|, max|n|)``.

    Each gradient array is compared in the infinity norm relative to its own
    magnitude, so entries that are tiny compared to the rest of the array do
    not dominate the figure.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if not a.size:
            continue
        scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
        if scale == 0.0:
            continue
        worst = max(worst, float(np.max(np.abs(a - n)) / scale))
    return worst


def kink_margin(fn):
    """Smallest distance of any ReLU input / max-pool runner-up gap from a kink during ``fn()``."""
    ops._kink_log = []
    try:
        fn()
        return min(ops._kink_log, default=np.inf)
    finally:
        ops._kink_log = None


@dataclass
class GradCheck:
    error: float    # over probed coordinates whose probes stayed on one side of every kink
    checked: int
    crossed: int    # probes that flipped a ReLU or changed a max-pool winner (excluded)

    @property
    def crossed_fraction(self):
        total = self.checked + self.crossed
        return self.crossed / total if total else 0.0


def finite_difference_check(fn, tensors, step=1e-3, max_coords=None, rng=None):
    """Compare backprop with central differences on (a sample of) coordinates.

    ``max_coords`` caps the number of coordinates probed per tensor; they are
    drawn from ``rng``.  A coordinate whose ``+step`` or ``-step`` probe
    changes the activation pattern straddles a kink, where the difference
    quotient is not a derivative; such coordinates are counted in
    ``crossed`` and left out of ``error``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    analytic = grad(fn(), tensors)
    coords = [_coordinates(a, max_coords, rng) for a in analytic]
    base = activation_pattern(fn)
    flags = []

    def probe():
        ops._pattern_log = []
        try:
            out = fn()
            flags.append(hashlib.sha256(b"".join(ops._pattern_log)).digest() != base)
            return out
        finally:
            ops._pattern_log = None

    numeric = numerical_gradient(probe, tensors, step, coords)
    bad = np.array(flags, dtype=bool).reshape(-1, 2).any(axis=1)
    picked, kept, offset = [], [], 0
    for a, c, n in zip(analytic, coords, numeric):
        ok = ~bad[offset:offset + len(c)]
        offset += len(c)
        picked.append(a.reshape(-1)[c][ok])
        kept.append(n[ok])
    return GradCheck(relative_error(picked, kept), int((~bad).sum()), int(bad.sum()))


def check_gradients(fn, tensors, step=1e-3):
    """Return the max relative error between backprop and central differences."""
    analytic = grad(fn(), tensors)
    numeric = numerical_gradient(fn, tensors, step)
    return relative_error(analytic, numeric)
