"""Elementwise, structural and loss operations with their backward rules."""
from typing import List, Optional, Sequence

import numpy as np

from bgdepth.autodiff.tensor import Tensor, record
from bgdepth.exceptions import InvalidGroundTruthError, ShapeError


def _check_same_shape(a: Tensor, b: Tensor, op: str):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    return record("add", (a, b), a.data + b.data, lambda g: (g, g))


def scale(x: Tensor, factor) -> Tensor:
    """Multiply by a constant scalar or a constant array broadcastable to ``x``."""
    factor = np.asarray(factor, dtype=np.float64)
    if np.broadcast_shapes(factor.shape, x.shape) != x.shape:
        raise ShapeError(f"scale: factor {factor.shape} does not broadcast to {x.shape}")
    return record("scale", (x,), x.data * factor, lambda g: (g * factor,))


def sum(x: Tensor) -> Tensor:  # noqa: A001
    shape = x.shape
    return record("sum", (x,), np.array([x.data.sum()]), lambda g: (np.full(shape, g[0]),))


def reshape(x: Tensor, shape) -> Tensor:
    original = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as e:
        raise ShapeError(f"reshape: cannot view {original} as {shape}") from e
    return record("reshape", (x,), data, lambda g: (g.reshape(original),))


def relu(x: Tensor) -> Tensor:
    positive = x.data > 0
    return record("relu", (x,), np.where(positive, x.data, 0.0), lambda g: (g * positive,))


def sigmoid(x: Tensor) -> Tensor:
    data = x.data
    out = np.empty_like(data)
    positive = data >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-data[positive]))
    exp_x = np.exp(data[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    return record("sigmoid", (x,), out, lambda g: (g * out * (1.0 - out),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    xs = list(xs)
    if not xs:
        raise ShapeError("concat: needs at least one tensor")
    reference = xs[0].shape
    axis = axis % len(reference)
    for x in xs[1:]:
        if len(x.shape) != len(reference) or any(
            a != b for i, (a, b) in enumerate(zip(x.shape, reference)) if i != axis
        ):
            raise ShapeError(f"concat: {x.shape} incompatible with {reference} along axis {axis}")
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", xs, np.concatenate([x.data for x in xs], axis=axis), backward)


def split(x: Tensor, sizes: Sequence[int], axis: int = 1) -> List[Tensor]:
    """Inverse of :func:`concat`: cut ``x`` into consecutive groups of ``sizes``."""
    axis = axis % x.ndim
    if int(np.sum(sizes)) != x.shape[axis]:
        raise ShapeError(f"split: sizes {list(sizes)} do not add up to extent {x.shape[axis]}")
    outputs = []
    start = 0
    for size in sizes:
        index = [slice(None)] * x.ndim
        index[axis] = slice(start, start + size)
        index = tuple(index)
        shape = x.shape

        def backward(g, index=index, shape=shape):
            full = np.zeros(shape)
            full[index] = g
            return (full,)

        outputs.append(record("split", (x,), x.data[index].copy(), backward))
        start += size
    return outputs


def lincomb_channels(x: Tensor, coefficients: Sequence[float]) -> Tensor:
    """Constant weighted sum over the channel axis, keeping a single channel."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if x.ndim < 2 or coefficients.shape != (x.shape[1],):
        raise ShapeError(f"lincomb_channels: {coefficients.shape} coefficients for {x.shape}")
    view = (1, -1) + (1,) * (x.ndim - 2)
    weights = coefficients.reshape(view)
    out = (x.data * weights).sum(axis=1, keepdims=True)
    return record("lincomb_channels", (x,), out, lambda g: (g * weights,))


def weighted_gather(x: Tensor, indices: np.ndarray, weights: np.ndarray) -> Tensor:
    """``out[p] = sum_k weights[p, k] * x.flat[indices[p, k]]`` with constant indices/weights.

    This is slicing with the interpolation weights fixed by a reference image: gradients
    flow to the gathered values only.
    """
    indices = np.asarray(indices, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if indices.shape != weights.shape:
        raise ShapeError(f"weighted_gather: indices {indices.shape} vs weights {weights.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= x.data.size):
        raise ShapeError("weighted_gather: index out of range")
    flat = x.data.reshape(-1)
    out = (flat[indices] * weights).sum(axis=-1)
    size = flat.size
    shape = x.shape

    def backward(g):
        contributions = (weights * g[..., None]).reshape(-1)
        return (np.bincount(indices.reshape(-1), weights=contributions, minlength=size).reshape(shape),)

    return record("weighted_gather", (x,), out, backward)


def mse(pred: Tensor, target, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean squared error over all elements, or over ``mask``-selected elements only."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=np.float64)
    if target_data.shape != pred.shape:
        raise ShapeError(f"mse: prediction {pred.shape} and target {target_data.shape} differ")
    if mask is None:
        selected = np.ones(pred.shape, dtype=bool)
    else:
        selected = np.asarray(mask, dtype=bool)
        if selected.shape != pred.shape:
            raise ShapeError(f"mse: mask {selected.shape} does not match {pred.shape}")
    count = int(selected.sum())
    if count == 0:
        raise InvalidGroundTruthError("mse: no valid elements to average over")
    diff = np.where(selected, pred.data - target_data, 0.0)
    value = np.array([np.square(diff).sum() / count])

    def backward(g):
        grad = 2.0 * diff / count * g[0]
        return (grad, -grad)

    inputs = (pred, target) if isinstance(target, Tensor) else (pred,)
    return record("mse", inputs, value, backward)
