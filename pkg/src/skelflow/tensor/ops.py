"""Differentiable operations on :class:`~skelflow.tensor.core.Tensor`.

Convolution and pooling take an optional leading batch axis: a rank-2 input
to :func:`conv1d_temporal` or a rank-4 input to :func:`conv3d` /
:func:`maxpool3d` is treated as a batch of one and returned unbatched.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

from ..errors import InvalidArgumentError
from . import kernels
from .core import Tensor, make_result

Triple = Union[int, Sequence[int]]


def _triple(v: Triple, what: str) -> tuple[int, int, int]:
    t = (v, v, v) if isinstance(v, (int, np.integer)) else tuple(int(i) for i in v)
    if len(t) != 3 or min(t) < 1:
        raise InvalidArgumentError(f"{what} must be three positive integers, got {v!r}")
    return t  # type: ignore[return-value]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.values + b.values

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_result(out, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.values * b.values

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.values, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.values, b.shape))

    return make_result(out, (a, b), backward)


elementwise_add = add
elementwise_mul = mul


def relu(x: Tensor) -> Tensor:
    pos = x.values > 0
    out = np.where(pos, x.values, 0.0)

    def backward(g):
        x.accumulate(np.where(pos, g, 0.0))

    return make_result(out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.values - x.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        x.accumulate(s * (g - (g * s).sum(axis=axis, keepdims=True)))

    return make_result(s, (x,), backward)


def log_softmax_values(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean categorical cross-entropy of ``logits`` (B, C) against int labels."""
    z = logits.values
    if z.ndim == 1:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels))
    if not np.issubdtype(labels.dtype, np.integer):
        raise InvalidArgumentError(f"labels must be integers, got dtype {labels.dtype}")
    b, c = z.shape
    if labels.shape != (b,):
        raise InvalidArgumentError(f"expected {b} labels, got shape {labels.shape}")
    if labels.min() < 0 or labels.max() >= c:
        raise InvalidArgumentError(f"label out of range [0, {c}): {labels.tolist()}")
    logp = log_softmax_values(z)
    loss = -logp[np.arange(b), labels].mean()

    def backward(g):
        d = np.exp(logp)
        d[np.arange(b), labels] -= 1.0
        logits.accumulate((d * (g / b)).reshape(logits.shape))

    return make_result(np.asarray(loss), (logits,), backward)


def nll_of_probabilities(probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of a probability matrix (B, C)."""
    p = probs.values
    labels = np.asarray(labels)
    b = p.shape[0]
    picked = p[np.arange(b), labels]
    loss = -np.log(picked).mean()

    def backward(g):
        d = np.zeros_like(p)
        d[np.arange(b), labels] = -g / (b * picked)
        probs.accumulate(d)

    return make_result(np.asarray(loss), (probs,), backward)


def dropout(x: Tensor, rate: float, seed, training: bool = True) -> Tensor:
    """Inverted dropout. ``seed`` is an int or a ``numpy.random.Generator``.

    The sampled keep-mask is a constant of the backward pass.
    """
    if not 0.0 <= rate < 1.0:
        raise InvalidArgumentError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if seed is None:
        raise InvalidArgumentError("dropout needs an explicit seed or generator")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    out = x.values * mask

    def backward(g):
        x.accumulate(g * mask)

    return make_result(out, (x,), backward)


# ---------------------------------------------------------------------------
# shape


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.values.reshape(shape)

    def backward(g):
        x.accumulate(g.reshape(x.shape))

    return make_result(out, (x,), backward)


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.values.transpose(axes))

    def backward(g):
        x.accumulate(g.transpose(inverse))

    return make_result(out, (x,), backward)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    out = np.concatenate([p.values for p in parts], axis=axis)
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        for p, piece in zip(parts, np.split(g, bounds, axis=axis)):
            p.accumulate(piece)

    return make_result(out, tuple(parts), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g):
        x.accumulate(np.broadcast_to(g, x.shape))

    return make_result(np.asarray(x.values.sum()), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = x.values.mean(axis=axis, keepdims=keepdims)
    n = x.values.size // max(np.asarray(out).size, 1)

    def backward(g):
        gg = g if (keepdims or axis is None) else np.expand_dims(g, axis)
        x.accumulate(np.broadcast_to(gg / n, x.shape))

    return make_result(np.asarray(out), (x,), backward)


# ---------------------------------------------------------------------------
# dense layers


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Fully connected layer ``x @ weight + bias`` with weight (in, out)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise InvalidArgumentError(
            f"linear: input {x.shape} incompatible with weight {weight.shape}"
        )
    out = x.values @ weight.values
    if bias is not None:
        out = out + bias.values
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g @ weight.values.T)
        if weight.requires_grad:
            weight.accumulate(x.values.T @ g)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))

    return make_result(out, parents, backward)


def batchnorm_train(
    x: Tensor, gamma: Tensor, beta: Tensor, axes: Sequence[int], eps: float = 1e-5
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Normalize with statistics over ``axes`` of the current batch.

    ``gamma`` and ``beta`` must broadcast against ``x``. Returns the output
    together with the batch mean and (biased) variance so the caller can
    maintain running averages.
    """
    axes = tuple(axes)
    mu = x.values.mean(axis=axes, keepdims=True)
    xc = x.values - mu
    var = (xc * xc).mean(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = gamma.values * xhat + beta.values
    n = x.values.size // mu.size

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            dxhat = g * gamma.values
            s1 = dxhat.sum(axis=axes, keepdims=True)
            s2 = (dxhat * xhat).sum(axis=axes, keepdims=True)
            x.accumulate(inv * (dxhat - s1 / n - xhat * (s2 / n)))

    return make_result(out, (x, gamma, beta), backward), mu, var


def batchnorm_eval(
    x: Tensor, gamma: Tensor, beta: Tensor, mean_: np.ndarray, var: np.ndarray, eps: float = 1e-5
) -> Tensor:
    scale = 1.0 / np.sqrt(var + eps)
    xhat = (x.values - mean_) * scale
    out = gamma.values * xhat + beta.values

    def backward(g):
        if gamma.requires_grad:
            gamma.accumulate(_unbroadcast(g * xhat, gamma.shape))
        if beta.requires_grad:
            beta.accumulate(_unbroadcast(g, beta.shape))
        if x.requires_grad:
            x.accumulate(_unbroadcast(g * gamma.values * scale, x.shape))

    return make_result(out, (x, gamma, beta), backward)


# ---------------------------------------------------------------------------
# convolution and pooling


def _padding(size: int, k: int, s: int, mode: str, dim: str) -> tuple[int, int, int]:
    """Return (pad_before, pad_after, out_size) along one axis."""
    if mode == "valid":
        if size < k:
            raise InvalidArgumentError(
                f"kernel size {k} exceeds input {dim} extent {size} under valid padding"
            )
        return 0, 0, (size - k) // s + 1
    if mode == "same":
        out = -(-size // s)
        total = max((out - 1) * s + k - size, 0)
        return total // 2, total - total // 2, out
    raise InvalidArgumentError(f"padding must be 'valid' or 'same', got {mode!r}")


def conv3d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: Triple = 1,
    padding: str = "same",
) -> Tensor:
    """3D cross-correlation.

    Args:
        x: (B, C, L, H, W) or (C, L, H, W).
        weight: (C_out, C, f_t, f_h, f_w).
        bias: (C_out,) or None.
        stride: int or (s_t, s_h, s_w).
        padding: ``"valid"`` or ``"same"`` (output = ceil(input / stride)).
    """
    unbatched = x.ndim == 4
    xv = x.values[None] if unbatched else x.values
    if xv.ndim != 5:
        raise InvalidArgumentError(f"conv3d input must have rank 4 or 5, got shape {x.shape}")
    if weight.ndim != 5 or weight.shape[1] != xv.shape[1]:
        raise InvalidArgumentError(
            f"conv3d weight {weight.shape} does not match input channels {xv.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise InvalidArgumentError(f"conv3d bias {bias.shape} != ({weight.shape[0]},)")
    stride = _triple(stride, "stride")
    k = tuple(weight.shape[2:])
    b, c, l, h, w = xv.shape
    pads = [
        _padding(n, kk, ss, padding, dim)
        for n, kk, ss, dim in zip((l, h, w), k, stride, ("time", "height", "width"))
    ]
    out_shape = tuple(p[2] for p in pads)
    if any(p[0] or p[1] for p in pads):
        xp = np.pad(xv, ((0, 0), (0, 0)) + tuple((p[0], p[1]) for p in pads))
    else:
        xp = np.ascontiguousarray(xv)
    cols = kernels.im2col3d(xp, k, stride, out_shape)
    o = weight.shape[0]
    wmat = weight.values.reshape(o, -1)
    y = cols @ wmat.T
    if bias is not None:
        y += bias.values
    out = np.ascontiguousarray(y.reshape((b,) + out_shape + (o,)).transpose(0, 4, 1, 2, 3))
    if unbatched:
        out = out[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gb = g[None] if unbatched else g
        grows = np.ascontiguousarray(gb.transpose(0, 2, 3, 4, 1)).reshape(-1, o)
        if weight.requires_grad:
            weight.accumulate((grows.T @ cols).reshape(weight.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(grows.sum(axis=0))
        if x.requires_grad:
            dxp = kernels.col2im3d(np.ascontiguousarray(grows @ wmat), xp.shape, k, stride, out_shape)
            dx = dxp[
                :,
                :,
                pads[0][0] : pads[0][0] + l,
                pads[1][0] : pads[1][0] + h,
                pads[2][0] : pads[2][0] + w,
            ]
            x.accumulate(dx[0] if unbatched else dx)

    return make_result(out, parents, backward)


def conv1d_temporal(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: str = "valid",
) -> Tensor:
    """1D convolution along the last axis.

    Args:
        x: (B, C_in, T) or (C_in, T).
        weight: (C_out, filter_size, C_in).
        bias: (C_out,) or None.
        stride: positive int.
        padding: ``"valid"`` (T_out = floor((T - f) / s) + 1) or ``"same"``
            (T_out = ceil(T / s)).
    """
    if x.ndim not in (2, 3):
        raise InvalidArgumentError(f"conv1d input must have rank 2 or 3, got shape {x.shape}")
    if weight.ndim != 3:
        raise InvalidArgumentError(f"conv1d weight must be (C_out, f, C_in), got {weight.shape}")
    c_in = x.shape[-2]
    if weight.shape[2] != c_in:
        raise InvalidArgumentError(
            f"conv1d weight expects {weight.shape[2]} input channels, input has {c_in}"
        )
    if padding == "valid" and x.shape[-1] < weight.shape[1]:
        raise InvalidArgumentError(
            f"conv1d filter size {weight.shape[1]} exceeds time extent {x.shape[-1]}"
        )
    if not isinstance(stride, (int, np.integer)) or stride < 1:
        raise InvalidArgumentError(f"stride must be a positive integer, got {stride!r}")
    # Reuse the 3D path with unit spatial extent.
    x5 = reshape(x, x.shape + (1, 1))
    w5 = reshape(transpose(weight, (0, 2, 1)), (weight.shape[0], c_in, weight.shape[1], 1, 1))
    y = conv3d(x5, w5, bias, stride=(int(stride), 1, 1), padding=padding)
    return reshape(y, y.shape[:-2])


def maxpool3d(x: Tensor, pool: Triple) -> Tensor:
    """Non-overlapping 3D max pooling with stride equal to the pool size.

    Dimensions not divisible by their pool size are padded at the end with
    -inf; a pool larger than the unpadded extent is an error. On ties the gradient goes to the first maximum in scan order.
    """
    pool = _triple(pool, "pool size")
    unbatched = x.ndim == 4
    xv = x.values[None] if unbatched else x.values
    if xv.ndim != 5:
        raise InvalidArgumentError(f"maxpool3d input must have rank 4 or 5, got shape {x.shape}")
    dims = xv.shape[2:]
    padded = tuple(-(-n // p) * p for n, p in zip(dims, pool))
    for n, p, name in zip(dims, pool, ("time", "height", "width")):
        if p > n:
            raise InvalidArgumentError(f"pool size {p} exceeds {name} extent {n}")
    if padded != dims:
        xv = np.pad(
            xv,
            ((0, 0), (0, 0)) + tuple((0, q - n) for n, q in zip(dims, padded)),
            constant_values=-np.inf,
        )
    xv = np.ascontiguousarray(xv)
    out, arg = kernels.maxpool3d_forward(xv, pool)
    if unbatched:
        out = out[0]

    def backward(g):
        gb = np.ascontiguousarray(g[None] if unbatched else g)
        dx = kernels.maxpool3d_backward(gb, arg, pool, xv.shape)
        dx = dx[:, :, : dims[0], : dims[1], : dims[2]]
        x.accumulate(dx[0] if unbatched else dx)

    return make_result(out, (x,), backward)


def glorot_limit(fan_in: int, fan_out: int) -> float:
    return math.sqrt(6.0 / (fan_in + fan_out))
