"""Differentiable tensor ops used by the networks.

Only the ops the cosine networks need live here, each with a hand-written
backward rule. Convolution is cross-correlation with "same" zero padding
(centre offset ``L // 2``, stride 1, no bias); learned filters make it
equivalent to flipped convolution up to filter reversal.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, DataError
from .tensor import Tensor, as_tensor, record


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _im2col(x: np.ndarray, L: int) -> np.ndarray:
    B, Cin, S = x.shape
    left = L // 2
    xp = np.pad(x, ((0, 0), (0, 0), (left, L - 1 - left)))
    win = sliding_window_view(xp, L, axis=2)  # [B, Cin, S, L]
    return win.transpose(0, 2, 1, 3).reshape(B * S, Cin * L)


def conv1d(x: Tensor, filters: Tensor) -> Tensor:
    """``out[b, co, n] = sum_ci sum_l x[b, ci, n + l - L//2] * filters[ci, co, l]``."""
    if x.data.ndim != 3 or filters.data.ndim != 3:
        raise ConfigError(f"conv1d expects [B,Cin,S] and [Cin,Cout,L], got {x.shape} and {filters.shape}")
    B, Cin, S = x.shape
    fCin, Cout, L = filters.shape
    if fCin != Cin:
        raise ConfigError(f"conv1d: filters declare Cin={fCin} but input has {Cin} channels")
    if L < 1 or S < 1:
        raise ConfigError("conv1d needs L >= 1 and S >= 1")

    cols = _im2col(x.data, L)
    wmat = filters.data.transpose(0, 2, 1).reshape(Cin * L, Cout)
    out = np.ascontiguousarray((cols @ wmat).reshape(B, S, Cout).transpose(0, 2, 1))

    def backward(g):
        gflat = g.transpose(0, 2, 1).reshape(B * S, Cout)
        gw = None
        if filters.requires_grad:
            gw = (cols.T @ gflat).reshape(Cin, L, Cout).transpose(0, 2, 1)
        gx = None
        if x.requires_grad:
            # channel-major layout keeps the L shifted adds contiguous
            gT = g.transpose(1, 0, 2).reshape(Cout, B * S)
            gcols = (wmat @ gT).reshape(Cin, L, B, S)
            gp = np.zeros((Cin, B, S + L - 1), dtype=g.dtype)
            for l in range(L):
                gp[:, :, l:l + S] += gcols[:, l]
            gx = gp[:, :, L // 2:L // 2 + S].transpose(1, 0, 2)
        return gx, gw

    return record(out, (x, filters), backward, "conv1d")


def maxpool1d(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pool; trailing remainder is dropped, ties go to the first index."""
    B, C, S = x.shape
    if window < 1:
        raise ConfigError(f"pool window must be >= 1, got {window}")
    if window > S:
        raise ConfigError(f"pool window {window} exceeds sequence length {S}")
    if window == 1:
        return record(x.data.copy(), (x,), lambda g: (g,), "maxpool1d")
    So = S // window
    xr = x.data[:, :, :So * window].reshape(B, C, So, window)
    idx = np.argmax(xr, axis=-1)[..., None]
    out = np.take_along_axis(xr, idx, axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros((B, C, So, window), dtype=g.dtype)
        np.put_along_axis(gx, idx, g[..., None], axis=-1)
        gx = gx.reshape(B, C, So * window)
        if So * window < S:
            gx = np.pad(gx, ((0, 0), (0, 0), (0, S - So * window)))
        return (gx,)

    return record(out, (x,), backward, "maxpool1d")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return record(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return record(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record(out, (a, b), backward, "mul")


def scale(a: Tensor, c: float) -> Tensor:
    c = a.dtype.type(c)
    return record(a.data * c, (a,), lambda g: (g * c,), "scale")


def dense(x: Tensor, weights: Tensor, bias: Tensor | None = None) -> Tensor:
    if x.data.ndim != 2 or weights.data.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ConfigError(f"dense: cannot apply weights {weights.shape} to input {x.shape}")
    out = x.data @ weights.data
    inputs = (x, weights)
    if bias is not None:
        if bias.shape != (weights.shape[1],):
            raise ConfigError(f"dense: bias shape {bias.shape} does not match {weights.shape[1]} outputs")
        out = out + bias.data
        inputs = (x, weights, bias)

    def backward(g):
        grads = [g @ weights.data.T, x.data.T @ g]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return record(out, inputs, backward, "dense")


def gap_time(x: Tensor) -> Tensor:
    """Mean over the sample (last) axis: [B,C,S] -> [B,C]."""
    S = x.shape[-1]
    out = x.data.mean(axis=-1)

    def backward(g):
        return (np.broadcast_to(g[..., None] / S, x.shape),)

    return record(out, (x,), backward, "gap_time")


def gap_channels(x: Tensor) -> Tensor:
    """Mean over the channel axis: [B,C,S] -> [B,S]."""
    C = x.shape[1]
    out = x.data.mean(axis=1)

    def backward(g):
        return (np.broadcast_to(g[:, None, :] / C, x.shape),)

    return record(out, (x,), backward, "gap_channels")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return record(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def repeat_rows(x: Tensor, n: int) -> Tensor:
    """Broadcast a [1, M] row to [n, M]; backward sums over the copies."""
    if x.shape[0] != 1:
        raise ConfigError(f"repeat_rows expects a single row, got {x.shape}")
    out = np.repeat(x.data, n, axis=0)
    return record(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),), "repeat_rows")


def spatial_dropout1d(x: Tensor, p: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    """Zero whole (batch, channel) feature maps with probability ``p``."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("spatial_dropout1d in training mode needs an rng")
    B, C = x.shape[:2]
    keep = rng.random((B, C)) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)[:, :, None]
    return record(x.data * mask, (x,), lambda g: (g * mask,), "spatial_dropout1d")


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch-mean negative log-likelihood of the true class."""
    labels = np.asarray(labels, dtype=np.int64)
    B, Z = logits.shape
    if Z < 2:
        raise ConfigError(f"need at least 2 classes, got {Z}")
    if labels.shape != (B,):
        raise DataError(f"expected {B} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= Z):
        raise DataError(f"label out of range [0, {Z}): {labels.min()}..{labels.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(B), labels].mean()
    probs = np.exp(logp)

    def backward(g):
        d = probs.copy()
        d[np.arange(B), labels] -= 1.0
        return (d * (g / B),)

    return record(np.asarray(loss, dtype=logits.dtype), (logits,), backward, "softmax_cross_entropy")
