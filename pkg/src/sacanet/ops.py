"""Differentiable primitives over :class:`~sacanet.tensor.Tensor`.

Every function here computes its forward value with numpy and, when a tape
is active, registers a vector-Jacobian product. Elementwise binary ops
broadcast numpy-style; the backward pass sums gradients back down to each
operand's shape.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from sacanet.errors import DimensionError, InputError
from sacanet.tensor import Tensor, as_tensor, make_result

IGNORE_INDEX = 255


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, name: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{name}: shapes {list(a.shape)} and {list(b.shape)} do not broadcast") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    """Elementwise product; a plain float ``b`` scales ``a``."""
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = float(b)
        return make_result(a.data * s, (a,), lambda g: (g * s,))
    _broadcast_shape(a, b, "mul")
    return make_result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "div")
    out = a.data / b.data
    return make_result(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    """Logistic function, computed without overflow for any finite input."""
    z = x.data
    e = np.exp(-np.abs(z))
    out = np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,))


# ------------------------------------------------------------------ reductions


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(np.asarray(out), (x,), vjp)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """``exp(x - max)`` normalised along ``axis``."""
    if not -x.ndim <= axis < x.ndim:
        raise DimensionError(f"softmax: axis {axis} invalid for shape {list(x.shape)}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result(out, (x,), vjp)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return make_result(out, (x,), lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def pool_spatial(x: Tensor, kind: str = "avg", mask: Optional[np.ndarray] = None) -> Tensor:
    """Per-channel mean or max over the two spatial axes of ``[..., H, W, C]``.

    ``mask`` (boolean ``[..., H, W]``) restricts the reduction to valid
    positions. Max-pool ties send the gradient to the lowest flat index.
    """
    if x.ndim < 3:
        raise DimensionError(f"pool_spatial expects [..., H, W, C], got {list(x.shape)}")
    *lead, h, w, c = x.shape
    if h * w == 0:
        raise DimensionError("pool_spatial: empty spatial extent")
    flat = x.data.reshape(*lead, h * w, c)
    m = None
    if mask is not None:
        m = np.broadcast_to(np.asarray(mask, dtype=bool), (*lead, h, w)).reshape(*lead, h * w, 1)
    if kind == "avg":
        # summing sorted values makes the result independent of pixel order, bit for bit
        if m is None:
            out = np.sort(flat, axis=-2).sum(axis=-2) / (h * w)
            return make_result(
                out, (x,), lambda g: (np.broadcast_to(g[..., None, :] / (h * w), flat.shape).reshape(x.shape),)
            )
        count = m.sum(axis=-2)
        out = np.sort(np.where(m, flat, 0.0), axis=-2).sum(axis=-2) / count
        return make_result(out, (x,), lambda g: ((g[..., None, :] * m / count[..., None, :]).reshape(x.shape),))
    if kind == "max":
        src = flat if m is None else np.where(m, flat, -np.inf)
        idx = src.argmax(axis=-2)
        out = np.take_along_axis(flat, idx[..., None, :], axis=-2)[..., 0, :]

        def vjp(g):
            gx = np.zeros_like(flat)
            np.put_along_axis(gx, idx[..., None, :], g[..., None, :], axis=-2)
            return (gx.reshape(x.shape),)

        return make_result(out, (x,), vjp)
    raise InputError(f"pool kind must be 'avg' or 'max', got {kind!r}")


# -------------------------------------------------------------------- linear


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product ``[..., M, K] @ [..., K, N]``."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dims of {list(a.shape)} and {list(b.shape)} differ") from None
    out = a.data @ b.data

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(out, (a, b), vjp)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Channels-last 2D convolution: ``x [H, W, Cin]``, ``w [kh, kw, Cin, Cout]``."""
    if x.ndim != 3 or w.ndim != 4 or x.shape[2] != w.shape[2]:
        raise DimensionError(f"conv2d: input {list(x.shape)} incompatible with kernel {list(w.shape)}")
    kh, kw, cin, cout = w.shape
    xp = np.pad(x.data, ((padding, padding), (padding, padding), (0, 0)))
    hp, wp = xp.shape[:2]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {hp}x{wp}")
    s0, s1, s2 = xp.strides
    cols = np.lib.stride_tricks.as_strided(
        xp, shape=(ho, wo, kh, kw, cin), strides=(s0 * stride, s1 * stride, s0, s1, s2), writeable=False
    ).reshape(ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wmat
    if b is not None:
        out = out + b.data
    out = out.reshape(ho, wo, cout)
    inputs = (x, w) if b is None else (x, w, b)

    def vjp(g):
        g2 = g.reshape(ho * wo, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        gcols = (g2 @ wmat.T).reshape(ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[i : i + stride * ho : stride, j : j + stride * wo : stride] += gcols[:, :, i, j]
        gx = gxp[padding : hp - padding, padding : wp - padding]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, inputs, vjp)


def _interp_matrix(n_in: int, factor: int) -> np.ndarray:
    # align_corners=False: source coordinate (i + 0.5) / factor - 0.5, clamped at the edges
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for i in range(n_out):
        src = max((i + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        m[i, i0] += 1.0 - lam
        m[i, i1] += lam
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    """Bilinear resize of ``[..., H, W, C]`` by an integer factor (align_corners=False)."""
    if x.ndim < 3:
        raise DimensionError(f"bilinear_upsample expects [..., H, W, C], got {list(x.shape)}")
    if factor < 1:
        raise InputError("upsample factor must be >= 1")
    uh = _interp_matrix(x.shape[-3], factor)
    uw = _interp_matrix(x.shape[-2], factor)
    out = np.einsum("ia,...abc->...ibc", uh, x.data)
    out = np.einsum("jb,...ibc->...ijc", uw, out)

    def vjp(g):
        gx = np.einsum("jb,...ijc->...ibc", uw, g)
        return (np.einsum("ia,...ibc->...abc", uh, gx),)

    return make_result(out, (x,), vjp)


# ------------------------------------------------------------------ structure


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {list(x.shape)} as {list(shape)}") from None
    return make_result(out, (x,), lambda g: (g.reshape(x.shape),))


def permute(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"permute: {list(axes)} is not a permutation of {x.ndim} axes")
    inv = tuple(np.argsort(axes))
    return make_result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def transpose(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(x, axes)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        out = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[list(t.shape) for t in xs]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]
    return make_result(out, xs, lambda g: tuple(np.split(g, bounds, axis=axis)))


def take(x: Tensor, index) -> Tensor:
    """Advanced indexing ``x[index]``; repeated indices accumulate gradient."""
    out = x.data[index]

    def vjp(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result(out, (x,), vjp)


def pad2d(x: Tensor, pad_h: int, pad_w: int) -> Tensor:
    """Zero-pad the bottom and right of the spatial axes of ``[..., H, W, C]``."""
    if pad_h == 0 and pad_w == 0:
        return x
    widths = [(0, 0)] * (x.ndim - 3) + [(0, pad_h), (0, pad_w), (0, 0)]
    h, w = x.shape[-3], x.shape[-2]
    return make_result(np.pad(x.data, widths), (x,), lambda g: (g[..., :h, :w, :],))


def crop2d(x: Tensor, h: int, w: int) -> Tensor:
    """Keep the top-left ``h x w`` spatial window of ``[..., H, W, C]``."""
    if (h, w) == x.shape[-3:-1]:
        return x
    big_h, big_w = x.shape[-3], x.shape[-2]
    widths = [(0, 0)] * (x.ndim - 3) + [(0, big_h - h), (0, big_w - w), (0, 0)]
    return make_result(x.data[..., :h, :w, :], (x,), lambda g: (np.pad(g, widths),))


def cross_entropy(logits: Tensor, labels, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over positions whose label is not ignored.

    ``logits`` is ``[..., K]`` and ``labels`` an integer array of the leading
    shape. With no scored positions the loss is 0 with zero gradient.
    """
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"cross_entropy: labels {list(labels.shape)} vs logits {list(logits.shape)}")
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= k))
    if bad.any():
        raise InputError(f"labels must lie in [0, {k}) or equal {ignore_index}")
    n = int(valid.sum())
    if n == 0:
        return make_result(np.array(0.0), (logits,), lambda g: (np.zeros_like(logits.data),))
    lp = log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    idx = np.where(valid, labels, 0)[..., None]
    np.put_along_axis(onehot, idx, valid[..., None].astype(np.float64), axis=-1)
    return mul(sum(mul(lp, Tensor(onehot))), -1.0 / n)


# --------------------------------------------------------------- patch tiles


def split_tiles(x: Tensor, h: int, w: int) -> Tensor:
    """``[H, W, C]`` with H, W multiples of h, w -> ``[nH*nW, h, w, C]`` in row-major tile order."""
    big_h, big_w, c = x.shape
    if big_h % h or big_w % w:
        raise DimensionError(f"split_tiles: {big_h}x{big_w} not divisible into {h}x{w} tiles")
    nh, nw = big_h // h, big_w // w
    t = reshape(x, (nh, h, nw, w, c))
    t = permute(t, (0, 2, 1, 3, 4))
    return reshape(t, (nh * nw, h, w, c))


def stitch_tiles(tiles: Tensor, nh: int, nw: int) -> Tensor:
    """Inverse of :func:`split_tiles`."""
    n, h, w, c = tiles.shape
    if n != nh * nw:
        raise DimensionError(f"stitch_tiles: {n} tiles cannot form a {nh}x{nw} grid")
    t = reshape(tiles, (nh, nw, h, w, c))
    t = permute(t, (0, 2, 1, 3, 4))
    return reshape(t, (nh * h, nw * w, c))
