"""Differentiable primitives.

Batched layouts: vectors are ``[..., F]``; sequences are ``[B, T, C]`` (a
single unbatched sequence ``[T, C]`` is accepted wherever a sequence is).
Weight matrices follow the ``[out, in]`` convention so that
``dense(x, W, b) = act(x @ W.T + b)``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ArgumentError, ShapeError, VocabularyError
from .tensor import Tensor, as_tensor, make_result

ACTIVATIONS = ("linear", "relu", "sigmoid", "tanh", "softmax")

# When lists, piecewise-linear ops append their distance to the nearest
# non-differentiable point and their active branch (ReLU signs, max-pool
# winners); gradient checks use both to reject instances that sit on a kink.
_kink_log = None
_pattern_log = None


def _log_kink(margin, pattern=None):
    if _kink_log is not None and margin.size:
        _kink_log.append(float(np.min(margin)))
    if _pattern_log is not None and pattern is not None:
        _pattern_log.append(np.ascontiguousarray(pattern).tobytes())


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _sigmoid(z):
    # tanh form: overflow-free for any z and a single ufunc pass
    return 0.5 * (1.0 + np.tanh(0.5 * z))


# -- elementwise ---------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data + b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data - b.data, (a, b),
                       lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make_result(a.data * b.data, (a, b),
                       lambda g: (_unbroadcast(g * b.data, a.shape),
                                  _unbroadcast(g * a.data, b.shape)))


def neg(a):
    return make_result(-a.data, (a,), lambda g: (-g,))


def square(a):
    return make_result(a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a):
    _log_kink(np.abs(a.data), a.data > 0)
    return make_result(np.maximum(a.data, 0.0), (a,), lambda g: (g * (a.data > 0),))


def sigmoid(a):
    s = _sigmoid(a.data)
    return make_result(s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a):
    t = np.tanh(a.data)
    return make_result(t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a):
    e = np.exp(a.data)
    return make_result(e, (a,), lambda g: (g * e,))


def log(a, eps=0.0):
    """Natural log of ``max(a, eps)``; clamped entries receive no gradient."""
    clamped = np.maximum(a.data, eps) if eps > 0 else a.data
    live = a.data > eps if eps > 0 else np.ones(a.shape, dtype=bool)
    return make_result(np.log(clamped), (a,), lambda g: (np.where(live, g / clamped, 0.0),))


def softmax(a, axis=-1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (a,), back)


def activate(x, activation):
    if activation == "linear":
        return x
    if activation == "relu":
        return relu(x)
    if activation == "sigmoid":
        return sigmoid(x)
    if activation == "tanh":
        return tanh(x)
    if activation == "softmax":
        return softmax(x)
    raise ArgumentError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


# -- reductions and shape ------------------------------------------------------

def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return make_result(out, (a,), back)


def mean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis), 1.0 / n)


def reshape(a, shape):
    return make_result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(index):
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (int, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(a, index):
    basic = _is_basic_index(index)

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_result(a.data[index], (a,), back)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                       lambda g: tuple(np.split(g, cuts, axis=axis)))


def split(a, sizes, axis=-1):
    """Split ``a`` into consecutive chunks of the given sizes."""
    out, start = [], 0
    for n in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + n)
        out.append(getitem(a, tuple(idx)))
        start += n
    if start != a.shape[axis]:
        raise ShapeError(f"split sizes {sizes} do not cover axis of length {a.shape[axis]}")
    return out


def repeat_vector(a, times):
    """``[B, D] -> [B, times, D]`` (or ``[D] -> [times, D]``)."""
    if times < 1:
        raise ArgumentError("repeat count must be >= 1")
    data = np.repeat(np.expand_dims(a.data, -2), times, axis=-2)
    return make_result(data, (a,), lambda g: (g.sum(axis=-2),))


# -- linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
        gb = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.multiply.outer(a.data, g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(a.data @ b.data, (a, b), back)


def linear(x, W, b=None):
    """``x @ W.T + b`` for ``x`` of shape ``[..., F]`` and ``W`` of shape ``[U, F]``."""
    x, W = as_tensor(x), as_tensor(W)
    if x.shape[-1] != W.shape[1]:
        raise ShapeError(f"input width {x.shape[-1]} does not match weight {W.shape}")
    if b is not None:
        b = as_tensor(b)
        if b.shape != (W.shape[0],):
            raise ShapeError(f"bias shape {b.shape} does not match weight {W.shape}")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data

    def back(g):
        g2 = g.reshape(-1, W.shape[0])
        x2 = x.data.reshape(-1, W.shape[1])
        grads = ((g @ W.data).reshape(x.shape), g2.T @ x2)
        if b is not None:
            grads += (g2.sum(axis=0),)
        return grads

    parents = (x, W) if b is None else (x, W, b)
    return make_result(y, parents, back)


def dense(x, W, b, activation="linear"):
    return activate(linear(x, W, b), activation)


# -- sequence ops --------------------------------------------------------------

def _as_batched(x):
    if x.ndim == 2:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 3:
        raise ShapeError(f"expected [T, C] or [B, T, C] input, got shape {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return reshape(y, y.shape[1:]) if squeeze else y


def pad_time(x, left, right):
    """Zero-pad the time axis of ``[B, T, C]``."""
    def back(g):
        return (g[:, left:g.shape[1] - right, :],)

    data = np.pad(x.data, ((0, 0), (left, right), (0, 0)))
    return make_result(data, (x,), back)


def conv1d(x, kernels, bias, activation="linear", padding="valid"):
    """Cross-correlate ``x [T, C_in]`` with ``kernels [C_out, n, C_in]``.

    ``padding="same"`` zero-pads so the output keeps length ``T`` (left pad
    ``(n - 1) // 2``, remainder on the right).
    """
    x, kernels, bias = as_tensor(x), as_tensor(kernels), as_tensor(bias)
    xb, squeeze = _as_batched(x)
    c_out, n, c_in = kernels.shape
    if xb.shape[2] != c_in:
        raise ShapeError(f"input has {xb.shape[2]} channels, kernels expect {c_in}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias shape {bias.shape} does not match {c_out} output channels")
    if padding == "same":
        left = (n - 1) // 2
        xb = pad_time(xb, left, n - 1 - left)
    elif padding != "valid":
        raise ArgumentError(f"unknown padding {padding!r}")
    T = xb.shape[1]
    if n > T:
        raise ShapeError(f"kernel length {n} exceeds input length {T}")
    t_out = T - n + 1
    # windows: [B, t_out, C_in, n] -> [B, t_out, n, C_in]
    windows = np.swapaxes(sliding_window_view(xb.data, n, axis=1), 2, 3)
    y = np.einsum("btkc,okc->bto", windows, kernels.data, optimize=True) + bias.data

    def back(g):
        gk = np.einsum("bto,btkc->okc", g, windows, optimize=True)
        gw = np.einsum("bto,okc->btkc", g, kernels.data, optimize=True)
        gx = np.zeros_like(xb.data)
        for k in range(n):
            gx[:, k:k + t_out, :] += gw[:, :, k, :]
        return gx, gk, g.sum(axis=(0, 1))

    out = make_result(y, (xb, kernels, bias), back)
    return _unbatch(activate(out, activation), squeeze)


def maxpool1d(x, pool, stride=None):
    """Per-channel max over windows of ``pool`` steps; ties route gradient to the first index."""
    stride = pool if stride is None else stride
    if stride < 1 or pool < 1:
        raise ArgumentError("pool size and stride must be >= 1")
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    B, T, C = xb.shape
    if pool > T:
        raise ShapeError(f"pool size {pool} exceeds input length {T}")
    t_out = (T - pool) // stride + 1
    windows = sliding_window_view(xb.data, pool, axis=1)[:, ::stride][:, :t_out]  # [B, t_out, C, p]
    arg = windows.argmax(axis=-1)
    if (_kink_log is not None or _pattern_log is not None) and pool > 1:
        top2 = np.sort(windows, axis=-1)[..., -2:]
        _log_kink(top2[..., 1] - top2[..., 0], arg)
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    src = np.arange(t_out)[None, :, None] * stride + arg  # source time index per output

    def back(g):
        gx = np.zeros_like(xb.data)
        bi = np.arange(B)[:, None, None]
        ci = np.arange(C)[None, None, :]
        np.add.at(gx, (bi, src, ci), g)
        return (gx,)

    return _unbatch(make_result(y, (xb,), back), squeeze)


def upsample1d(x, size):
    """Repeat every time step ``size`` times."""
    if size < 1:
        raise ArgumentError("upsampling size must be >= 1")
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    B, T, C = xb.shape
    y = np.repeat(xb.data, size, axis=1)
    out = make_result(y, (xb,), lambda g: (g.reshape(B, T, size, C).sum(axis=2),))
    return _unbatch(out, squeeze)


def embedding(tokens, table, mask_value=None):
    """Row lookup ``table[tokens]``; returns ``(vectors, mask)``.

    ``mask`` is False wherever ``tokens == mask_value`` (all True when
    ``mask_value`` is None).
    """
    tokens = np.asarray(tokens)
    if not np.issubdtype(tokens.dtype, np.integer):
        raise VocabularyError("tokens must be integers")
    V = table.shape[0]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= V):
        bad = int(tokens.max()) if tokens.max() >= V else int(tokens.min())
        raise VocabularyError(f"token {bad} outside vocabulary of size {V}")

    def back(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, tokens, g)
        return (gt,)

    out = make_result(table.data[tokens], (table,), back)
    mask = np.ones(tokens.shape, dtype=bool) if mask_value is None else tokens != mask_value
    return out, mask


def dropout(x, rate, rng, training=True):
    """Inverted dropout; identity outside training."""
    if not training or rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return make_result(x.data * keep, (x,), lambda g: (g * keep,))


# -- recurrent -----------------------------------------------------------------

def gru_step(x_t, h_prev, params):
    """One GRU update built from primitive ops.

    ``c = sig(Wc x + Uc h)``, ``r = sig(Wr x + Ur h)``,
    ``h' = tanh(W x + U (r * h))``, ``h_new = c * h + (1 - c) * h'``.
    """
    c = sigmoid(add(linear(x_t, params.Wc), linear(h_prev, params.Uc)))
    r = sigmoid(add(linear(x_t, params.Wr), linear(h_prev, params.Ur)))
    cand = tanh(add(linear(x_t, params.W), linear(mul(r, h_prev), params.U)))
    return add(mul(c, h_prev), mul(sub(1.0, c), cand))


def gru_unrolled(x, params, h0=None, mask=None):
    """Reference GRU over ``[B, T, F]`` composed from :func:`gru_step`; returns ``[B, T, E]``.

    Masked steps (``mask[b, t]`` False) carry the previous state unchanged.
    """
    B, T, _ = x.shape
    E = params.Wc.shape[0]
    h = as_tensor(np.zeros((B, E))) if h0 is None else as_tensor(h0)
    outs = []
    for t in range(T):
        h_new = gru_step(x[:, t, :], h, params)
        if mask is not None:
            m = mask[:, t].astype(float)[:, None]
            h_new = add(mul(h_new, m), mul(h, 1.0 - m))
        h = h_new
        outs.append(reshape(h, (B, 1, E)))
    return concat(outs, axis=1)


def gru_sequence(x, params, mask=None):
    """Fused GRU over ``[B, T, F]`` with hand-written backpropagation through time.

    Numerically identical to :func:`gru_unrolled` with a zero initial state
    but records a single graph node.  Returns the full state sequence
    ``[B, T, E]``; masked steps repeat the previous state.
    """
    x = as_tensor(x)
    xb, squeeze = _as_batched(x)
    B, T, F = xb.shape
    Wc, Wr, W = params.Wc, params.Wr, params.W
    Uc, Ur, U = params.Uc, params.Ur, params.U
    E = Wc.shape[0]
    if Wc.shape[1] != F:
        raise ShapeError(f"GRU expects {Wc.shape[1]} input features, got {F}")
    m = np.ones((B, T)) if mask is None else np.asarray(mask, dtype=float).reshape(B, T)

    xd = xb.data
    # time-major buffers keep every per-step slice contiguous;
    # update and reset gates share one recurrent matmul per step
    Wcr = np.concatenate([Wc.data, Wr.data], axis=0)  # [2E, F]
    Ucr_T = np.ascontiguousarray(np.concatenate([Uc.data, Ur.data], axis=0).T)  # [E, 2E]
    U_T = np.ascontiguousarray(U.data.T)
    xt_major = np.ascontiguousarray(xd.transpose(1, 0, 2))  # [T, B, F]
    pcr_x = xt_major @ Wcr.T  # [T, B, 2E]
    ph_x = xt_major @ W.data.T
    mT = np.ascontiguousarray(m.T)[:, :, None]  # [T, B, 1]
    hs = np.zeros((T + 1, B, E))
    cr_all = np.empty((T, B, 2 * E))
    cands = np.empty((T, B, E))
    for t in range(T):
        hp = hs[t]
        cr = _sigmoid(pcr_x[t] + hp @ Ucr_T)
        c, r = cr[:, :E], cr[:, E:]
        cand = np.tanh(ph_x[t] + (r * hp) @ U_T)
        h_new = cand + c * (hp - cand)
        mt = mT[t]
        hs[t + 1] = hp + mt * (h_new - hp)
        cr_all[t], cands[t] = cr, cand

    def back(g):
        gT = g.transpose(1, 0, 2)
        da_cr = np.empty((T, B, 2 * E))
        da_h = np.empty((T, B, E))
        dh_next = np.zeros((B, E))
        Ucr = Ucr_T.T
        c_all, r_all = cr_all[:, :, :E], cr_all[:, :, E:]
        hprev = hs[:-1]
        # gradient-independent factors for every step at once
        f_h = (1.0 - c_all) * (1.0 - cands * cands)
        f_c = (hprev - cands) * c_all * (1.0 - c_all)
        f_r = hprev * r_all * (1.0 - r_all)
        masked = mask is not None
        for t in range(T - 1, -1, -1):
            dh = gT[t] + dh_next
            dh_new = mT[t] * dh if masked else dh
            dah = dh_new * f_h[t]
            drh = dah @ U.data
            da_cr[t, :, :E] = dh_new * f_c[t]
            da_cr[t, :, E:] = drh * f_r[t]
            da_h[t] = dah
            dh_next = c_all[t] * dh_new + drh * r_all[t] + da_cr[t] @ Ucr
            if masked:
                dh_next += (1.0 - mT[t]) * dh
        # weight gradients in one pass over all time steps
        x2 = xt_major.reshape(T * B, F)
        hp2 = hs[:-1].reshape(T * B, E)
        dcr2 = da_cr.reshape(T * B, 2 * E)
        dh2 = da_h.reshape(T * B, E)
        gWcr = dcr2.T @ x2
        gUcr = dcr2.T @ hp2
        gW = dh2.T @ x2
        gU = dh2.T @ (cr_all[:, :, E:].reshape(T * B, E) * hp2)
        gx = (dcr2 @ Wcr + dh2 @ W.data).reshape(T, B, F).transpose(1, 0, 2)
        return gx, gWcr[:E], gWcr[E:], gW, gUcr[:E], gUcr[E:], gU

    out = make_result(np.ascontiguousarray(hs[1:].transpose(1, 0, 2)), (xb, Wc, Wr, W, Uc, Ur, U), back)
    return _unbatch(out, squeeze)
