import math

import numpy as np

from bgdepth.autodiff import conv, norm, ops
from bgdepth.autodiff.tensor import Tensor
from bgdepth.models.base import Module


def he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Conv(Module):
    def __init__(self, rng, in_channels, out_channels, kernel, nd, stride=1, pad=0):
        super().__init__()
        shape = (out_channels, in_channels) + (kernel,) * nd
        self.nd = nd
        self.stride = stride
        self.pad = pad
        self.weight = self.add_param("weight", he_uniform(rng, shape, in_channels * kernel ** nd))
        self.bias = self.add_param("bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv.conv_nd(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class ConvTranspose(Module):
    """Learned 2x upsampling (kernel 4, stride 2, padding 1)."""

    def __init__(self, rng, in_channels, out_channels, nd, kernel=4, stride=2, pad=1):
        super().__init__()
        shape = (in_channels, out_channels) + (kernel,) * nd
        self.stride = stride
        self.pad = pad
        self.weight = self.add_param("weight", he_uniform(rng, shape, in_channels * kernel ** nd))
        self.bias = self.add_param("bias", np.zeros(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv.conv_transpose_nd(x, self.weight, self.bias, stride=self.stride, pad=self.pad)


class BatchNorm(Module):
    def __init__(self, channels):
        super().__init__()
        self.state = norm.BatchNormState(channels)
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        self.add_buffer("running_mean", self.state.running_mean)
        self.add_buffer("running_var", self.state.running_var)

    def __call__(self, x: Tensor) -> Tensor:
        return norm.batchnorm(x, self.gamma, self.beta, self.state, self.training)


class ConvBlock(Module):
    """Convolution, ReLU and batch norm in either order of the last two."""

    def __init__(self, rng, in_channels, out_channels, kernel, nd, order="conv_relu_bn"):
        super().__init__()
        self.order = order
        self.conv = self.add_module("conv", Conv(rng, in_channels, out_channels, kernel, nd, pad=kernel // 2))
        self.bn = self.add_module("bn", BatchNorm(out_channels))

    def __call__(self, x: Tensor) -> Tensor:
        x = self.conv(x)
        if self.order == "conv_relu_bn":
            return self.bn(ops.relu(x))
        return ops.relu(self.bn(x))
