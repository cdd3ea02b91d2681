"""Raster value types: grayscale and RGB images in [0, 1] and metric depth maps.

All three are immutable once built; their numpy buffers are flagged read-only.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from bgdepth.exceptions import DimensionMismatchError, ImageValueError


def _frozen_array(values, dtype=np.float64):
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


def _check_unit_range(array, kind):
    if not np.all(np.isfinite(array)):
        raise ImageValueError(f"{kind} contains non-finite values")
    if array.size and (array.min() < 0.0 or array.max() > 1.0):
        raise ImageValueError(
            f"{kind} values must lie in [0, 1], got [{array.min()}, {array.max()}]"
        )


@dataclass(frozen=True)
class ImageGray:
    data: np.ndarray

    def __post_init__(self):
        array = _frozen_array(self.data)
        if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ImageValueError(f"ImageGray expects a non-empty (H, W) array, got {array.shape}")
        _check_unit_range(array, "ImageGray")
        object.__setattr__(self, "data", array)

    @classmethod
    def clipped(cls, values):
        return cls(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    def to_rgb(self) -> "ImageRGB":
        return ImageRGB(np.repeat(self.data[:, :, None], 3, axis=2))


@dataclass(frozen=True)
class ImageRGB:
    data: np.ndarray

    def __post_init__(self):
        array = _frozen_array(self.data)
        if array.ndim != 3 or array.shape[2] != 3 or array.shape[0] < 1 or array.shape[1] < 1:
            raise ImageValueError(f"ImageRGB expects a non-empty (H, W, 3) array, got {array.shape}")
        _check_unit_range(array, "ImageRGB")
        object.__setattr__(self, "data", array)

    @classmethod
    def clipped(cls, values):
        return cls(np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape[:2]

    def channel(self, index: int) -> ImageGray:
        return ImageGray(self.data[:, :, index])

    def channels(self):
        return [self.channel(index) for index in range(3)]


@dataclass(frozen=True)
class DepthMap:
    """Metric depth in meters with a per-pixel validity mask.

    Invalid pixels always store 0 so equality and hashing of payloads is stable.
    """
    data: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        depth = np.array(self.data, dtype=np.float64, copy=True)
        if depth.ndim != 2 or depth.shape[0] < 1 or depth.shape[1] < 1:
            raise ImageValueError(f"DepthMap expects a non-empty (H, W) array, got {depth.shape}")
        if self.mask is None:
            mask = np.isfinite(depth) & (depth > 0)
        else:
            mask = np.array(self.mask, dtype=bool, copy=True)
            if mask.shape != depth.shape:
                raise DimensionMismatchError(
                    f"Depth mask shape {mask.shape} does not match depth shape {depth.shape}"
                )
        valid = depth[mask]
        if valid.size and (not np.all(np.isfinite(valid)) or valid.min() <= 0.0):
            raise ImageValueError("Valid depths must be finite and strictly positive")
        depth[~mask] = 0.0
        depth.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "data", depth)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self):
        return self.data.shape

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    def scaled(self, factor: float) -> "DepthMap":
        return DepthMap(self.data * factor, self.mask)

    def normalized(self, depth_norm: float) -> np.ndarray:
        """Depth divided by ``depth_norm`` and clipped to [0, 1]; invalid pixels are 0."""
        return np.clip(self.data / depth_norm, 0.0, 1.0)
