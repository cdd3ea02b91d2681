from dataclasses import dataclass, field

import numpy as np

from bgdepth.autodiff.tensor import Tensor, record
from bgdepth.exceptions import DegenerateBatchError, ShapeError

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class BatchNormState:
    """Running statistics of one batch-norm layer, updated in place in training mode."""
    channels: int
    momentum: float = BN_MOMENTUM
    eps: float = BN_EPS
    running_mean: np.ndarray = field(default=None)
    running_var: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros(self.channels)
        if self.running_var is None:
            self.running_var = np.ones(self.channels)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, training: bool) -> Tensor:
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise ShapeError(f"batchnorm: gamma {gamma.shape} / beta {beta.shape} for {channels} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    view = (1, channels) + (1,) * (x.ndim - 2)
    count = x.data.size // channels
    if training:
        if count < 2:
            raise DegenerateBatchError(
                f"batchnorm: training mode needs at least 2 samples per channel, got {count}"
            )
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        momentum = state.momentum
        state.running_mean[:] = (1.0 - momentum) * state.running_mean + momentum * mean
        state.running_var[:] = (1.0 - momentum) * state.running_var + momentum * var * count / (count - 1)
    else:
        mean = state.running_mean.copy()
        var = state.running_var.copy()
    inv_std = (1.0 / np.sqrt(var + state.eps)).reshape(view)
    x_hat = (x.data - mean.reshape(view)) * inv_std
    gamma_view = gamma.data.reshape(view)
    out = gamma_view * x_hat + beta.data.reshape(view)

    def backward(g):
        grad_gamma = (g * x_hat).sum(axis=axes)
        grad_beta = g.sum(axis=axes)
        grad_x_hat = g * gamma_view
        if training:
            grad_x = inv_std / count * (
                count * grad_x_hat
                - grad_x_hat.sum(axis=axes, keepdims=True)
                - x_hat * (grad_x_hat * x_hat).sum(axis=axes, keepdims=True)
            )
        else:
            grad_x = grad_x_hat * inv_std
        return grad_x, grad_gamma, grad_beta

    return record(f"batchnorm{x.ndim - 2}d", (x, gamma, beta), out, backward)


def batchnorm3d(x, gamma, beta, state, training=True):
    if x.ndim != 5:
        raise ShapeError(f"batchnorm3d: expected a rank-5 tensor, got {x.shape}")
    return batchnorm(x, gamma, beta, state, training)


def batchnorm2d(x, gamma, beta, state, training=True):
    if x.ndim != 4:
        raise ShapeError(f"batchnorm2d: expected a rank-4 tensor, got {x.shape}")
    return batchnorm(x, gamma, beta, state, training)
