"""Strided N-d convolution, transposed convolution and max pooling.

Weights follow the usual layouts: ``(F, C, *K)`` for convolution and ``(C, F, *K)`` for
transposed convolution. All three share the same three kernels: a correlation (gather),
its adjoint (scatter) and the weight correlation used by both backward passes.
"""
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bgdepth.autodiff.tensor import Tensor, record
from bgdepth.exceptions import ShapeError

CONV_METHODS = ("direct", "im2col")


def _as_tuple(value, n: int) -> Tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * n
    value = tuple(int(v) for v in value)
    if len(value) != n:
        raise ShapeError(f"Expected {n} values, got {value}")
    return value


def _window(offset, stride, out_spatial):
    return (slice(None), slice(None)) + tuple(
        slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offset, stride, out_spatial)
    )


def _output_extents(spatial, kernel, stride):
    extents = tuple((size - k) // s + 1 for size, k, s in zip(spatial, kernel, stride))
    if any(size < k for size, k in zip(spatial, kernel)) or any(e < 1 for e in extents):
        raise ShapeError(f"Kernel {kernel} with stride {stride} does not fit padded extents {spatial}")
    return extents


def _accumulate_taps(tap_window, w: np.ndarray, out_shape) -> np.ndarray:
    """Sum of per-tap channel contractions, taps visited in row-major kernel order.

    ``tap_window(offset)`` returns the (N, C, *O) input samples under one kernel tap.
    Both correlation paths share this loop, so their results agree bitwise.
    """
    out = np.zeros(out_shape)
    for offset in np.ndindex(*w.shape[2:]):
        window = np.ascontiguousarray(tap_window(offset))
        tap = w[(slice(None), slice(None)) + offset]
        out += np.moveaxis(np.tensordot(window, tap, axes=([1], [1])), -1, 1)
    return out


def _correlate(xp: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    """out[n, f, o] = sum_{c, k} w[f, c, k] * xp[n, c, o * s + k]."""
    out_spatial = _output_extents(xp.shape[2:], w.shape[2:], stride)
    return _accumulate_taps(
        lambda offset: xp[_window(offset, stride, out_spatial)],
        w,
        (xp.shape[0], w.shape[0]) + out_spatial,
    )


def _correlate_im2col(xp: np.ndarray, w: np.ndarray, stride) -> np.ndarray:
    """:func:`_correlate` reading taps out of a materialized patch array (N, C, *O, *K)."""
    kernel = w.shape[2:]
    nd = len(kernel)
    out_spatial = _output_extents(xp.shape[2:], kernel, stride)
    windows = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    windows = windows[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]
    patches = np.ascontiguousarray(windows[(slice(None), slice(None)) + tuple(slice(0, n) for n in out_spatial)])
    return _accumulate_taps(
        lambda offset: patches[(Ellipsis,) + offset],
        w,
        (xp.shape[0], w.shape[0]) + out_spatial,
    )


def _scatter(g: np.ndarray, w: np.ndarray, stride, padded_spatial) -> np.ndarray:
    """Adjoint of :func:`_correlate` with respect to its input."""
    kernel = w.shape[2:]
    out_spatial = g.shape[2:]
    out = np.zeros((g.shape[0], w.shape[1]) + tuple(padded_spatial))
    for offset in np.ndindex(*kernel):
        tap = w[(slice(None), slice(None)) + offset]
        out[_window(offset, stride, out_spatial)] += np.moveaxis(
            np.tensordot(g, tap, axes=([1], [0])), -1, 1
        )
    return out


def _weight_correlation(xp: np.ndarray, g: np.ndarray, stride, kernel) -> np.ndarray:
    """d/dw of :func:`_correlate`: result[f, c, k] = sum_{n, o} g[n, f, o] * xp[n, c, o * s + k]."""
    out_spatial = g.shape[2:]
    reduce_axes = [0] + list(range(2, g.ndim))
    gw = np.zeros((g.shape[1], xp.shape[1]) + tuple(kernel))
    for offset in np.ndindex(*kernel):
        window = xp[_window(offset, stride, out_spatial)]
        gw[(slice(None), slice(None)) + offset] = np.tensordot(g, window, axes=(reduce_axes, reduce_axes))
    return gw


def _bias_view(b: np.ndarray, nd: int) -> np.ndarray:
    return b.reshape((1, -1) + (1,) * nd)


def _check_operands(x: Tensor, w: Tensor, b: Optional[Tensor], nd: int, channel_axis: int, op: str):
    if x.ndim != nd + 2 or w.ndim != nd + 2:
        raise ShapeError(f"{op}: expected rank-{nd + 2} input and weight, got {x.shape} and {w.shape}")
    if x.shape[1] != w.shape[channel_axis]:
        raise ShapeError(f"{op}: input has {x.shape[1]} channels, weight expects {w.shape[channel_axis]}")
    out_channels = w.shape[1 - channel_axis]
    if b is not None and b.shape != (out_channels,):
        raise ShapeError(f"{op}: bias shape {b.shape} does not match {out_channels} output channels")


def conv_nd(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=1, pad=0, method: str = "direct") -> Tensor:
    nd = x.ndim - 2
    _check_operands(x, w, b, nd, 1, f"conv{nd}d")
    if method not in CONV_METHODS:
        raise ValueError(f"Unknown convolution method {method!r}, expected one of {CONV_METHODS}")
    stride = _as_tuple(stride, nd)
    pad = _as_tuple(pad, nd)
    kernel = w.shape[2:]
    xp = np.pad(x.data, [(0, 0), (0, 0)] + [(p, p) for p in pad])
    correlate = _correlate if method == "direct" else _correlate_im2col
    out = correlate(xp, w.data, stride)
    if b is not None:
        out += _bias_view(b.data, nd)
    crop = (slice(None), slice(None)) + tuple(slice(p, p + n) for p, n in zip(pad, x.shape[2:]))

    def backward(g):
        gx = _scatter(g, w.data, stride, xp.shape[2:])[crop]
        gw = _weight_correlation(xp, g, stride, kernel)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, g.ndim))))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return record(f"conv{nd}d", inputs, out, backward)


def conv_transpose_nd(x: Tensor, w: Tensor, b: Optional[Tensor] = None, stride=2, pad=1) -> Tensor:
    """Adjoint of :func:`conv_nd`; output extent is (I - 1) * s + k - 2p per axis."""
    nd = x.ndim - 2
    _check_operands(x, w, b, nd, 0, f"conv_transpose{nd}d")
    stride = _as_tuple(stride, nd)
    pad = _as_tuple(pad, nd)
    kernel = w.shape[2:]
    full = tuple((i - 1) * s + k for i, s, k in zip(x.shape[2:], stride, kernel))
    extents = tuple(f - 2 * p for f, p in zip(full, pad))
    if any(e < 1 for e in extents):
        raise ShapeError(f"conv_transpose{nd}d: padding {pad} leaves no output for input {x.shape}")
    crop = (slice(None), slice(None)) + tuple(slice(p, p + e) for p, e in zip(pad, extents))
    out = _scatter(x.data, w.data, stride, full)[crop]
    if b is not None:
        out = out + _bias_view(b.data, nd)

    def backward(g):
        g_full = np.zeros((g.shape[0], g.shape[1]) + full)
        g_full[crop] = g
        gx = _correlate(g_full, w.data, stride)
        gw = _weight_correlation(g_full, x.data, stride, kernel)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0,) + tuple(range(2, g.ndim))))
        return grads

    inputs = (x, w) if b is None else (x, w, b)
    return record(f"conv_transpose{nd}d", inputs, np.ascontiguousarray(out), backward)


def maxpool_nd(x: Tensor, kernel: int = 2) -> Tensor:
    """Non-overlapping max pooling. Ties go to the first element in row-major block order."""
    nd = x.ndim - 2
    spatial = x.shape[2:]
    if any(size % kernel for size in spatial):
        raise ShapeError(f"maxpool{nd}d: extents {spatial} are not divisible by kernel {kernel}")
    n, c = x.shape[:2]
    pooled = tuple(size // kernel for size in spatial)
    split_shape = (n, c) + tuple(v for p in pooled for v in (p, kernel))
    order = (0, 1) + tuple(2 + 2 * i for i in range(nd)) + tuple(3 + 2 * i for i in range(nd))
    blocks = x.data.reshape(split_shape).transpose(order).reshape((n, c) + pooled + (kernel ** nd,))
    argmax = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, argmax[..., None], axis=-1)[..., 0]
    inverse = np.argsort(order)

    def backward(g):
        grad_blocks = np.zeros(blocks.shape)
        np.put_along_axis(grad_blocks, argmax[..., None], g[..., None], axis=-1)
        grad = grad_blocks.reshape((n, c) + pooled + (kernel,) * nd).transpose(inverse)
        return (grad.reshape(x.shape),)

    return record(f"maxpool{nd}d", (x,), out, backward)


def _require_rank(x: Tensor, rank: int, op: str):
    if x.ndim != rank:
        raise ShapeError(f"{op}: expected a rank-{rank} tensor, got shape {x.shape}")


def conv3d(x, w, b=None, stride=1, pad=0, method="direct"):
    _require_rank(x, 5, "conv3d")
    return conv_nd(x, w, b, stride, pad, method)


def conv2d(x, w, b=None, stride=1, pad=0, method="direct"):
    _require_rank(x, 4, "conv2d")
    return conv_nd(x, w, b, stride, pad, method)


def conv_transpose3d(x, w, b=None, stride=2, pad=1):
    _require_rank(x, 5, "conv_transpose3d")
    return conv_transpose_nd(x, w, b, stride, pad)


def conv_transpose2d(x, w, b=None, stride=2, pad=1):
    _require_rank(x, 4, "conv_transpose2d")
    return conv_transpose_nd(x, w, b, stride, pad)


def maxpool3d(x, kernel=2):
    _require_rank(x, 5, "maxpool3d")
    return maxpool_nd(x, kernel)


def maxpool2d(x, kernel=2):
    _require_rank(x, 4, "maxpool2d")
    return maxpool_nd(x, kernel)
