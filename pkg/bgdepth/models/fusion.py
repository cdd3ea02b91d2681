"""2D refinement network fusing geometry, segmentation and edge maps into depth."""
from dataclasses import dataclass, fields
from enum import Enum
from typing import Dict, Literal, Optional, Sequence, Tuple

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, model_validator

from bgdepth.autodiff import ops
from bgdepth.autodiff.tensor import Tensor
from bgdepth.exceptions import DatasetError, DimensionMismatchError, ImageValueError
from bgdepth.imaging import DepthMap, ImageGray, ImageRGB, to_gray
from bgdepth.metrics.edges import sobel_magnitude
from bgdepth.models.base import Module
from bgdepth.models.bgunet import DEFAULT_DEPTH_NORM, BGUNetConfig
from bgdepth.models.layers import BatchNorm, Conv, ConvBlock, ConvTranspose
from bgdepth.pipeline.rng import make_rng

logger = structlog.get_logger(__name__)

GROUP_CHANNELS = {"geometry": 1, "rgb": 3, "segmentation": 3, "segmentation_luma": 1, "edge": 1}


class AblationMode(Enum):
    full = "full"
    rgb_seg_edge = "rgb_seg_edge"
    rgb_seg = "rgb_seg"
    rgb_edge = "rgb_edge"

    @classmethod
    def values(cls):
        return [member.value for member in cls.__members__.values()]


@dataclass
class AblationModeConf:
    name: str
    display_name: str
    # channel groups in concatenation order
    groups: Tuple[str, ...]

    @property
    def channels(self) -> int:
        return sum(GROUP_CHANNELS[group] for group in self.groups)

    @property
    def uses_geometry(self) -> bool:
        return "geometry" in self.groups


ABLATION_MODES = [
    AblationModeConf(
        name=AblationMode.full.value,
        display_name="Geometry+Seg+Edge",
        groups=("geometry", "segmentation", "edge"),
    ),
    AblationModeConf(
        name=AblationMode.rgb_seg_edge.value,
        display_name="RGB+Seg+Edge",
        groups=("rgb", "segmentation_luma", "edge"),
    ),
    AblationModeConf(
        name=AblationMode.rgb_seg.value,
        display_name="RGB+Seg",
        groups=("rgb", "segmentation"),
    ),
    AblationModeConf(
        name=AblationMode.rgb_edge.value,
        display_name="RGB+Edge",
        groups=("rgb", "edge"),
    ),
]

ABLATION_MODE_CONF: Dict[str, AblationModeConf] = {conf.name: conf for conf in ABLATION_MODES}


def mode_conf(mode) -> AblationModeConf:
    return ABLATION_MODE_CONF[AblationMode(mode).value]


@dataclass(frozen=True)
class FusionInput:
    """The 2D maps a fusion network can consume; absent maps are None."""
    geometry: Optional[ImageGray] = None
    segmentation: Optional[ImageRGB] = None
    edge: Optional[ImageGray] = None
    rgb: Optional[ImageRGB] = None

    def __post_init__(self):
        shapes = {f.name: getattr(self, f.name).shape[:2] for f in fields(self) if getattr(self, f.name) is not None}
        if len(set(shapes.values())) > 1:
            raise DimensionMismatchError(f"Fusion inputs disagree in size: {shapes}")

    @property
    def shape(self) -> Optional[Tuple[int, int]]:
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                return value.shape[:2]
        return None

    def planes(self, group: str) -> np.ndarray:
        """Channel-first planes of one group, e.g. (3, H, W) for ``rgb``."""
        source = "segmentation" if group == "segmentation_luma" else group
        value = getattr(self, source)
        if value is None:
            raise DatasetError(f"Fusion input is missing the {source} map")
        if group == "segmentation_luma":
            value = to_gray(value)
        if isinstance(value, ImageRGB):
            return np.moveaxis(value.data, -1, 0)
        return value.data[None]


def assemble(maps: FusionInput, mode) -> Tensor:
    """Concatenate the mode's channel groups into a (1, C, H, W) tensor."""
    conf = mode_conf(mode)
    return Tensor(np.concatenate([maps.planes(group) for group in conf.groups])[None])


def assemble_with_geometry(geometry: Tensor, maps: Sequence[FusionInput], mode) -> Tensor:
    """Batch assembly where the geometry channel is a live (N, 1, H, W) tensor."""
    conf = mode_conf(mode)
    if conf.groups[0] != "geometry":
        raise DatasetError(f"Mode {conf.name} has no geometry channel")
    rest = np.stack([np.concatenate([m.planes(group) for group in conf.groups[1:]]) for m in maps])
    return ops.concat([geometry, Tensor(rest)], axis=1)


def split_groups(x: Tensor, mode) -> Dict[str, Tensor]:
    conf = mode_conf(mode)
    if x.ndim != 4 or x.shape[1] != conf.channels:
        raise DimensionMismatchError(f"Mode {conf.name} expects {conf.channels} channels, got {x.shape}")
    parts = ops.split(x, [GROUP_CHANNELS[group] for group in conf.groups], axis=1)
    return dict(zip(conf.groups, parts))


class FusionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["fusion"] = "fusion"
    mode: AblationMode = AblationMode.full
    base_channels: int = Field(16, ge=1)
    stages: int = Field(4, ge=1)
    blocks_per_stage: int = Field(2, ge=1)
    image_width: int = Field(64, ge=1)
    image_height: int = Field(64, ge=1)
    geometry_source: Literal["checkpoint", "joint", "precomputed"] = "checkpoint"
    geometry_checkpoint: Optional[str] = None
    # architecture of the geometry network trained jointly; replaced by the checkpoint echo otherwise
    geometry_model: BGUNetConfig = Field(default_factory=BGUNetConfig)
    segmentation_classes: int = Field(8, ge=2)
    seed: int = 0

    @model_validator(mode="after")
    def _check_divisible(self):
        factor = 2 ** self.stages
        if self.image_width % factor or self.image_height % factor:
            raise ValueError(
                f"Image size {self.image_width}x{self.image_height} must be divisible by 2**stages = {factor}"
            )
        return self

    @property
    def in_channels(self) -> int:
        return mode_conf(self.mode).channels


class ResidualBlock(Module):
    def __init__(self, rng, in_channels, out_channels, stride):
        super().__init__()
        self.conv1 = self.add_module("conv1", Conv(rng, in_channels, out_channels, 3, 2, stride=stride, pad=1))
        self.bn1 = self.add_module("bn1", BatchNorm(out_channels))
        self.conv2 = self.add_module("conv2", Conv(rng, out_channels, out_channels, 3, 2, pad=1))
        self.bn2 = self.add_module("bn2", BatchNorm(out_channels))
        self.shortcut = None
        if stride != 1 or in_channels != out_channels:
            self.shortcut = self.add_module("shortcut", Conv(rng, in_channels, out_channels, 1, 2, stride=stride))

    def __call__(self, x: Tensor) -> Tensor:
        y = ops.relu(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        skip = x if self.shortcut is None else self.shortcut(x)
        return ops.relu(ops.add(y, skip))


class FusionNet(Module):
    """UNet with a residual encoder: stem, ``stages`` downsampling stages, mirrored decoder."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        rng = make_rng(cfg.seed, "fusion.init")
        channels = [cfg.base_channels * 2 ** level for level in range(cfg.stages + 1)]
        self.stem = self.add_module("stem", ConvBlock(rng, cfg.in_channels, channels[0], 3, 2, "conv_bn_relu"))
        self.stages = []
        for stage in range(cfg.stages):
            blocks = []
            for index in range(cfg.blocks_per_stage):
                in_channels = channels[stage] if index == 0 else channels[stage + 1]
                block = ResidualBlock(rng, in_channels, channels[stage + 1], stride=2 if index == 0 else 1)
                blocks.append(self.add_module(f"stages.{stage}.{index}", block))
            self.stages.append(blocks)
        self.upsamplers = [None] * cfg.stages
        self.decoders = [None] * cfg.stages
        for stage in reversed(range(cfg.stages)):
            self.upsamplers[stage] = self.add_module(
                f"upsamplers.{stage}", ConvTranspose(rng, channels[stage + 1], channels[stage], nd=2)
            )
            self.decoders[stage] = self.add_module(
                f"decoders.{stage}", ConvBlock(rng, 2 * channels[stage], channels[stage], 3, 2, "conv_bn_relu")
            )
        self.head = self.add_module("head", Conv(rng, channels[0], 1, 1, 2))

    def forward_tensor(self, x: Tensor) -> Tensor:
        expected = (self.cfg.in_channels, self.cfg.image_height, self.cfg.image_width)
        if x.ndim != 4 or x.shape[1:] != expected:
            raise DimensionMismatchError(f"FusionNet expects input (N, {expected}), got {x.shape}")
        x = self.stem(x)
        skips = [x]
        for stage, blocks in enumerate(self.stages):
            for block in blocks:
                x = block(x)
            if stage < self.cfg.stages - 1:
                skips.append(x)
        for stage in reversed(range(self.cfg.stages)):
            x = self.upsamplers[stage](x)
            x = ops.concat([x, skips[stage]], axis=1)
            x = self.decoders[stage](x)
        return ops.sigmoid(self.head(x))

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward_tensor(x)


def build(cfg: FusionConfig) -> FusionNet:
    net = FusionNet(cfg)
    logger.debug("Built FusionNet", parameters=net.parameter_count(), mode=cfg.mode.value)
    return net


def forward(net: FusionNet, x: Tensor) -> DepthMap:
    """Normalized depth in (0, 1) for a single (1, C, H, W) input."""
    with net.inference():
        out = net.forward_tensor(x).data[0, 0]
    return DepthMap(out, mask=np.ones(out.shape, dtype=bool))


def predict_depth(net: FusionNet, x: Tensor, depth_norm: float = DEFAULT_DEPTH_NORM) -> DepthMap:
    return forward(net, x).scaled(depth_norm)


def batch_loss(net: FusionNet, x: Tensor, targets: Sequence[DepthMap], depth_norm: float = DEFAULT_DEPTH_NORM) -> Tensor:
    pred = net.forward_tensor(x)
    target = np.stack([t.normalized(depth_norm) for t in targets])[:, None]
    mask = np.stack([t.mask for t in targets])[:, None]
    return ops.mse(pred, target, mask)


def pseudo_segmentation(img: ImageRGB, k: int, seed: int = 0, iterations: int = 20) -> ImageRGB:
    """k-means on RGB values, each pixel recolored with its centroid."""
    if k < 2:
        raise ValueError(f"Segmentation needs at least 2 classes, got {k}")
    pixels = img.data.reshape(-1, 3)
    colors = np.unique(pixels, axis=0)
    if k > len(colors):
        raise ImageValueError(f"Cannot form {k} classes from {len(colors)} distinct colors")
    rng = make_rng(seed, "pseudo_segmentation")
    centroids = colors[np.sort(rng.choice(len(colors), size=k, replace=False))].copy()
    labels = np.zeros(len(pixels), dtype=np.int64)
    for _ in range(iterations):
        distances = np.square(pixels[:, None, :] - centroids[None, :, :]).sum(axis=-1)
        labels = distances.argmin(axis=1)
        for cluster in range(k):
            members = pixels[labels == cluster]
            if len(members):
                centroids[cluster] = members.mean(axis=0)
    return ImageRGB.clipped(centroids[labels].reshape(img.shape))


def edge_map(img: ImageGray) -> ImageGray:
    magnitude = sobel_magnitude(img)
    peak = magnitude.max()
    if peak <= 0:
        return ImageGray(np.zeros(img.shape))
    return ImageGray.clipped(magnitude / peak)


def auxiliary_maps(
    rgb: ImageRGB,
    segmentation: Optional[ImageRGB] = None,
    edge: Optional[ImageGray] = None,
    classes: int = 8,
    seed: int = 0,
) -> Tuple[ImageRGB, ImageGray]:
    """Segmentation and edge maps, synthesized from ``rgb`` where none were supplied."""
    if segmentation is None:
        n_colors = len(np.unique(rgb.data.reshape(-1, 3), axis=0))
        if n_colors >= 2:
            segmentation = pseudo_segmentation(rgb, min(classes, n_colors), seed=seed)
        else:
            segmentation = rgb
    if edge is None:
        edge = edge_map(to_gray(rgb))
    return segmentation, edge
