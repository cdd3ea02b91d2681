"""3D UNet over bilateral grids.

The network reads the normalized grid of each image channel (optionally with its
occupancy) and predicts a dense geometry grid of the same extents. Sliced with the
input image as reference, that grid becomes the geometry map.
"""
from dataclasses import dataclass
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bgdepth.autodiff import conv, ops
from bgdepth.autodiff.tensor import Tensor
from bgdepth.exceptions import DimensionMismatchError
from bgdepth.grid import DenseGrid, GridParams, lift_gray, normalize, slice, slice_weights, splat_values
from bgdepth.imaging import LUMA_WEIGHTS, DepthMap, ImageGray, ImageRGB, as_gray, to_gray
from bgdepth.models.base import Module
from bgdepth.models.layers import Conv, ConvBlock, ConvTranspose
from bgdepth.pipeline.rng import make_rng

logger = structlog.get_logger(__name__)

DEFAULT_DEPTH_NORM = 10.0
KERNEL_SIZE = 5


class BGUNetConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["bgunet"] = "bgunet"
    in_channels: Literal[1, 3] = 1
    base_channels: int = Field(8, ge=1)
    depth: int = Field(2, ge=1)
    grid_params: GridParams = Field(default_factory=GridParams)
    include_occupancy: bool = False
    image_width: int = Field(64, ge=1)
    image_height: int = Field(64, ge=1)
    block_order: Literal["conv_relu_bn", "conv_bn_relu"] = "conv_relu_bn"
    loss_space: Literal["image", "grid"] = "image"
    seed: int = 0

    @model_validator(mode="after")
    def _check_grid_divisible(self):
        factor = 2 ** self.depth
        if any(extent % factor for extent in self.grid_shape):
            raise ValueError(
                f"Grid extents {self.grid_shape} must be divisible by 2**depth = {factor}"
            )
        return self

    @property
    def grid_shape(self) -> Tuple[int, int, int]:
        return self.grid_params.array_shape(self.image_width, self.image_height)

    @property
    def input_channels(self) -> int:
        return self.in_channels * (2 if self.include_occupancy else 1)


class _DoubleBlock(Module):
    def __init__(self, rng, in_channels, out_channels, order):
        super().__init__()
        self.block0 = self.add_module("block0", ConvBlock(rng, in_channels, out_channels, KERNEL_SIZE, 3, order))
        self.block1 = self.add_module("block1", ConvBlock(rng, out_channels, out_channels, KERNEL_SIZE, 3, order))

    def __call__(self, x):
        return self.block1(self.block0(x))


class BGUNet(Module):
    def __init__(self, cfg: BGUNetConfig):
        super().__init__()
        self.cfg = cfg
        rng = make_rng(cfg.seed, "bgunet.init")
        channels = [cfg.base_channels * 2 ** level for level in range(cfg.depth + 1)]
        self.encoders = []
        in_channels = cfg.input_channels
        for level in range(cfg.depth):
            block = _DoubleBlock(rng, in_channels, channels[level], cfg.block_order)
            self.encoders.append(self.add_module(f"encoders.{level}", block))
            in_channels = channels[level]
        self.bridge = self.add_module("bridge", _DoubleBlock(rng, in_channels, channels[-1], cfg.block_order))
        self.upsamplers = [None] * cfg.depth
        self.decoders = [None] * cfg.depth
        for level in reversed(range(cfg.depth)):
            self.upsamplers[level] = self.add_module(
                f"upsamplers.{level}", ConvTranspose(rng, channels[level + 1], channels[level], nd=3)
            )
            self.decoders[level] = self.add_module(
                f"decoders.{level}", _DoubleBlock(rng, 2 * channels[level], channels[level], cfg.block_order)
            )
        self.head = self.add_module("head", Conv(rng, channels[0], cfg.in_channels, 1, 3))

    def forward_tensor(self, x: Tensor) -> Tensor:
        """(N, C, H_g, W_g, B) grid batch to (N, in_channels, H_g, W_g, B) in (0, 1)."""
        expected = (self.cfg.input_channels,) + self.cfg.grid_shape
        if x.ndim != 5 or x.shape[1:] != expected:
            raise DimensionMismatchError(f"BGUNet expects input (N, {expected}), got {x.shape}")
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = conv.maxpool3d(x)
        x = self.bridge(x)
        for level in reversed(range(self.cfg.depth)):
            x = self.upsamplers[level](x)
            x = ops.concat([x, skips[level]], axis=1)
            x = self.decoders[level](x)
        return ops.sigmoid(self.head(x))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_tensor(x)


def build(cfg: BGUNetConfig) -> BGUNet:
    model = BGUNet(cfg)
    logger.debug("Built BGUNet", parameters=model.parameter_count(), depth=cfg.depth)
    return model


def references(cfg: BGUNetConfig, image: Union[ImageGray, ImageRGB]) -> List[ImageGray]:
    """The per-channel reference images the grids are lifted from and sliced with."""
    if cfg.in_channels == 1:
        return [as_gray(image)]
    if isinstance(image, ImageGray):
        image = image.to_rgb()
    return image.channels()


def lift_input(cfg: BGUNetConfig, image: Union[ImageGray, ImageRGB]) -> List[DenseGrid]:
    return [normalize(lift_gray(reference, cfg.grid_params)) for reference in references(cfg, image)]


def grid_input(cfg: BGUNetConfig, grids: Sequence[DenseGrid]) -> np.ndarray:
    if len(grids) != cfg.in_channels:
        raise DimensionMismatchError(f"Expected {cfg.in_channels} input grids, got {len(grids)}")
    for grid in grids:
        if grid.shape != cfg.grid_shape:
            raise DimensionMismatchError(f"Input grid {grid.shape} does not match configured {cfg.grid_shape}")
    planes = [grid.value for grid in grids]
    if cfg.include_occupancy:
        planes += [grid.occupancy.astype(np.float64) for grid in grids]
    return np.stack(planes)


def forward(model: BGUNet, grids: Sequence[DenseGrid]) -> List[DenseGrid]:
    """Inference pass with running statistics; the model's mode is left as it was."""
    x = Tensor(grid_input(model.cfg, grids)[None])
    with model.inference():
        out = model.forward_tensor(x).data[0]
    return [DenseGrid.full(channel) for channel in out]


def geometry_map(outputs: Sequence[DenseGrid], reference: Union[ImageGray, ImageRGB], p: GridParams) -> ImageGray:
    if len(outputs) == 1:
        return slice(outputs[0], as_gray(reference), p)
    if isinstance(reference, ImageGray):
        reference = reference.to_rgb()
    sliced = [slice(grid, channel, p).data for grid, channel in zip(outputs, reference.channels())]
    return to_gray(ImageRGB.clipped(np.stack(sliced, axis=-1)))


@dataclass(frozen=True)
class BGUNetExample:
    """One training sample with its slicing weights and targets precomputed."""
    grid_input: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    target: np.ndarray
    mask: np.ndarray
    grid_target: Optional[np.ndarray] = None
    grid_mask: Optional[np.ndarray] = None


def prepare_example(
    cfg: BGUNetConfig,
    image: Union[ImageGray, ImageRGB],
    gt: DepthMap,
    depth_norm: float = DEFAULT_DEPTH_NORM,
    grids: Optional[Sequence[DenseGrid]] = None,
) -> BGUNetExample:
    if gt.shape != image.shape[:2]:
        raise DimensionMismatchError(f"Ground truth {gt.shape} does not match image {image.shape[:2]}")
    p = cfg.grid_params
    refs = references(cfg, image)
    if grids is None:
        grids = [normalize(lift_gray(reference, p)) for reference in refs]
    size = int(np.prod(cfg.grid_shape))
    indices, weights = zip(*(slice_weights(reference, p, cfg.grid_shape) for reference in refs))
    indices = np.stack([idx + c * size for c, idx in enumerate(indices)])
    target = gt.normalized(depth_norm)
    mask = gt.mask
    grid_target = grid_mask = None
    if cfg.loss_space == "grid":
        valid = mask.astype(np.float64)
        grid_target = np.zeros((len(refs), size))
        grid_mask = np.zeros((len(refs), size), dtype=bool)
        for c, reference in enumerate(refs):
            value_sum = splat_values(target * valid, reference, p).value_sum.ravel()
            count = splat_values(valid, reference, p).value_sum.ravel()
            grid_mask[c] = count > 0
            np.divide(value_sum, count, out=grid_target[c], where=grid_mask[c])
    return BGUNetExample(
        grid_input=grid_input(cfg, grids),
        indices=indices,
        weights=np.stack(weights),
        target=target.ravel(),
        mask=mask.ravel(),
        grid_target=grid_target,
        grid_mask=grid_mask,
    )


def _slice_output(out: Tensor, examples: Sequence[BGUNetExample]) -> Tensor:
    size = int(np.prod(out.shape[1:]))
    indices = np.stack([e.indices + i * size for i, e in enumerate(examples)])
    weights = np.stack([e.weights for e in examples])
    sliced = ops.weighted_gather(out, indices, weights)
    if out.shape[1] == 3:
        sliced = ops.lincomb_channels(sliced, LUMA_WEIGHTS)
    return sliced


def sliced_geometry(model: BGUNet, examples: Sequence[BGUNetExample]) -> Tensor:
    """Differentiable geometry maps of a batch, shaped (N, 1, H * W)."""
    out = model.forward_tensor(Tensor(np.stack([e.grid_input for e in examples])))
    return _slice_output(out, examples)


def batch_loss(model: BGUNet, examples: Sequence[BGUNetExample]) -> Tensor:
    """Masked MSE between sliced geometry and normalized depth, over the whole batch."""
    out = model.forward_tensor(Tensor(np.stack([e.grid_input for e in examples])))
    if model.cfg.loss_space == "grid":
        flat = ops.reshape(out, out.shape[:2] + (-1,))
        return ops.mse(flat, np.stack([e.grid_target for e in examples]), np.stack([e.grid_mask for e in examples]))
    sliced = _slice_output(out, examples)
    target = np.stack([e.target for e in examples])[:, None, :]
    mask = np.stack([e.mask for e in examples])[:, None, :]
    return ops.mse(sliced, target, mask)


def loss(
    model: BGUNet,
    grids: Sequence[DenseGrid],
    reference: Union[ImageGray, ImageRGB],
    gt: DepthMap,
    depth_norm: float = DEFAULT_DEPTH_NORM,
) -> Tensor:
    return batch_loss(model, [prepare_example(model.cfg, reference, gt, depth_norm, grids)])


def predict_geometry(model: BGUNet, image: Union[ImageGray, ImageRGB]) -> ImageGray:
    return geometry_map(forward(model, lift_input(model.cfg, image)), image, model.cfg.grid_params)


def predict_depth(model: BGUNet, image, depth_norm: float = DEFAULT_DEPTH_NORM) -> DepthMap:
    geometry = predict_geometry(model, image).data
    return DepthMap(geometry * depth_norm, mask=geometry > 0)
