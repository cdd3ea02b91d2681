"""Central finite-difference checks for every differentiable operation."""
from typing import Callable, Dict, Sequence

import numpy as np
import structlog

from bgdepth.autodiff import conv, norm, ops
from bgdepth.autodiff.tensor import Param, Tape, Tensor

logger = structlog.get_logger(__name__)

GRADCHECK_EPS = 1e-5
GRADCHECK_TOLERANCE = 1e-5


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = GRADCHECK_EPS) -> float:
    """Largest relative error between tape gradients and central differences.

    ``f(*inputs)`` must return a scalar tensor. Inputs are perturbed in place, one
    element at a time, and restored afterwards. The error of each input is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)``.
    """
    for tensor in inputs:
        tensor.requires_grad = True
        tensor.grad = None
    with Tape() as tape:
        loss = f(*inputs)
    tape.backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]
    for tensor in inputs:
        if isinstance(tensor, Param):
            tensor.zero_grad()

    worst = 0.0
    for tensor, expected in zip(inputs, analytic):
        flat = tensor.data.reshape(-1)
        numeric = np.zeros(flat.size)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            plus = f(*inputs).item()
            flat[i] = original - eps
            minus = f(*inputs).item()
            flat[i] = original
            numeric[i] = (plus - minus) / (2.0 * eps)
        numeric = numeric.reshape(tensor.shape)
        scale = max(np.abs(expected).max(), np.abs(numeric).max(), 1e-12)
        worst = max(worst, float(np.abs(expected - numeric).max() / scale))
    return worst


def _projected(op, inputs, rng):
    """Scalar ``sum(op(*xs) * r)`` with a fixed random ``r``; plain sums hide some gradients."""
    weights = rng.standard_normal(op(*inputs).shape)
    return lambda *xs: ops.sum(ops.scale(op(*xs), weights))


def _away_from_zero(rng, shape):
    return rng.uniform(0.1, 1.0, shape) * rng.choice([-1.0, 1.0], shape)


def _distinct(rng, shape):
    return rng.permutation(int(np.prod(shape))).reshape(shape) * 0.01


def _op_cases(rng):
    def t(*shape):
        return Tensor(rng.standard_normal(shape))

    def state(channels):
        return norm.BatchNormState(channels)

    cases = {
        "conv3d": (lambda x, w, b: conv.conv3d(x, w, b, stride=1, pad=1), [t(2, 2, 4, 4, 4), t(3, 2, 3, 3, 3), t(3)]),
        "conv3d_strided": (lambda x, w, b: conv.conv3d(x, w, b, stride=2, pad=2), [t(1, 2, 5, 4, 4), t(2, 2, 5, 5, 5), t(2)]),
        "conv2d": (lambda x, w, b: conv.conv2d(x, w, b, stride=2, pad=1), [t(2, 3, 6, 5), t(4, 3, 3, 3), t(4)]),
        "conv_transpose3d": (lambda x, w, b: conv.conv_transpose3d(x, w, b), [t(1, 2, 3, 3, 3), t(2, 3, 4, 4, 4), t(3)]),
        "conv_transpose2d": (lambda x, w, b: conv.conv_transpose2d(x, w, b), [t(2, 2, 4, 3), t(2, 3, 4, 4), t(3)]),
        "maxpool3d": (conv.maxpool3d, [Tensor(_distinct(rng, (1, 2, 4, 4, 4)))]),
        "maxpool2d": (conv.maxpool2d, [Tensor(_distinct(rng, (2, 2, 4, 6)))]),
        "batchnorm3d": (
            lambda x, g, b, s=state(3): norm.batchnorm3d(x, g, b, s, training=True),
            [t(2, 3, 2, 3, 2), t(3), t(3)],
        ),
        "batchnorm2d": (
            lambda x, g, b, s=state(2): norm.batchnorm2d(x, g, b, s, training=True),
            [t(3, 2, 2, 3), t(2), t(2)],
        ),
        "relu": (ops.relu, [Tensor(_away_from_zero(rng, (2, 3, 4)))]),
        "sigmoid": (ops.sigmoid, [t(2, 3, 4)]),
        "concat": (lambda a, b: ops.concat([a, b], axis=1), [t(2, 2, 3), t(2, 3, 3)]),
        "split": (lambda x: ops.concat(ops.split(x, [1, 3], axis=1)[::-1], axis=1), [t(2, 4, 3)]),
        "add": (ops.add, [t(3, 4), t(3, 4)]),
        "reshape": (lambda x: ops.reshape(x, (6, 4)), [t(2, 3, 4)]),
        "lincomb_channels": (lambda x: ops.lincomb_channels(x, (0.299, 0.587, 0.114)), [t(2, 3, 5)]),
    }
    indices = rng.integers(0, 24, size=(7, 8))
    mask = rng.random((4, 4)) > 0.3
    weights = rng.uniform(0.0, 1.0, size=(7, 8))
    cases["weighted_gather"] = (lambda x: ops.weighted_gather(x, indices, weights), [t(2, 3, 4)])
    scalar_cases = {
        "sum": (ops.sum, [t(3, 4)]),
        "mse": (lambda p, q: ops.mse(p, q), [t(2, 5), t(2, 5)]),
        "mse_masked": (lambda p: ops.mse(p, np.zeros((4, 4)), mask=mask), [t(4, 4)]),
    }
    return cases, scalar_cases


def _bgunet_chain(seed: int):
    from bgdepth.grid import GridParams
    from bgdepth.imaging import DepthMap, ImageGray
    from bgdepth.models import bgunet

    rng = np.random.default_rng(seed)
    cfg = bgunet.BGUNetConfig(
        in_channels=1,
        base_channels=2,
        depth=1,
        grid_params=GridParams(sr_s=2, n_bins=8),
        image_width=16,
        image_height=16,
        seed=seed,
    )
    model = bgunet.build(cfg)
    image = ImageGray(rng.uniform(0.0, 1.0, (16, 16)))
    depth = DepthMap(rng.uniform(1.0, 9.0, (16, 16)))
    example = bgunet.prepare_example(cfg, image, depth)
    # small parameters keep the finite differences clear of ReLU kinks
    inputs = [model.param(name) for name in ("head.weight", "head.bias", "encoders.0.block0.conv.bias")]
    return (lambda *_: bgunet.batch_loss(model, [example])), inputs


def _fusion_chain(seed: int):
    from bgdepth.imaging import DepthMap, ImageGray, ImageRGB
    from bgdepth.models import fusion

    rng = np.random.default_rng(seed)
    cfg = fusion.FusionConfig(base_channels=2, stages=2, blocks_per_stage=1, image_width=8, image_height=8, seed=seed)
    net = fusion.build(cfg)
    maps = fusion.FusionInput(
        geometry=ImageGray(rng.uniform(0.0, 1.0, (8, 8))),
        segmentation=ImageRGB(rng.uniform(0.0, 1.0, (8, 8, 3))),
        edge=ImageGray(rng.uniform(0.0, 1.0, (8, 8))),
    )
    x = fusion.assemble(maps, cfg.mode)
    target = DepthMap(rng.uniform(1.0, 9.0, (8, 8)))
    inputs = [net.param(name) for name in ("head.weight", "head.bias", "stem.bn.gamma")]
    return (lambda *_: fusion.batch_loss(net, x, [target])), inputs


def run_gradcheck_suite(seed: int = 0) -> Dict[str, float]:
    """Max relative error per operation, plus both end-to-end network chains."""
    rng = np.random.default_rng(seed)
    cases, scalar_cases = _op_cases(rng)
    results = {}
    for name, (op, inputs) in cases.items():
        results[name] = grad_check(_projected(op, inputs, rng), inputs)
        logger.debug("Gradient check", op=name, error=results[name])
    for name, (f, inputs) in scalar_cases.items():
        results[name] = grad_check(f, inputs)
        logger.debug("Gradient check", op=name, error=results[name])
    for name, chain in (("bgunet_end_to_end", _bgunet_chain), ("fusion_end_to_end", _fusion_chain)):
        f, inputs = chain(seed)
        results[name] = grad_check(f, inputs)
        logger.debug("Gradient check", op=name, error=results[name])
    return results
