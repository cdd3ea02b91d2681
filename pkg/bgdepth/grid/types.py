import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from bgdepth.exceptions import DimensionMismatchError, ImageValueError


class GridParams(BaseModel):
    """Sampling of a bilateral grid.

    ``sr_s`` is the number of pixels per spatial cell and ``n_bins`` the size of the
    range axis. A normalised intensity ``i`` falls into bin ``round(i * (n_bins - 1))``.
    """
    model_config = ConfigDict(frozen=True)

    sr_s: int = Field(2, ge=1)
    n_bins: int = Field(16, ge=2)

    @classmethod
    def from_range_sampling_rate(cls, sr_r8: int, sr_s: int = 4) -> "GridParams":
        """Grid whose range axis samples 8-bit intensities every ``sr_r8`` levels.

        A rate of 8 gives the 32-bin axis and a rate of 4 the 64-bin axis.
        """
        return cls(sr_s=sr_s, n_bins=256 // sr_r8)

    @property
    def sr_r(self) -> float:
        return 1.0 / (self.n_bins - 1)

    def dims(self, width: int, height: int) -> Tuple[int, int, int]:
        """Grid extents (W_g, H_g, B) for an image of ``width`` x ``height`` pixels."""
        return (math.ceil(width / self.sr_s), math.ceil(height / self.sr_s), self.n_bins)

    def array_shape(self, width: int, height: int) -> Tuple[int, int, int]:
        """Storage order of grid arrays: (H_g, W_g, B), matching row-major images."""
        w_g, h_g, bins = self.dims(width, height)
        return (h_g, w_g, bins)

    def check_reference(self, grid_shape, width: int, height: int):
        expected = self.array_shape(width, height)
        if tuple(grid_shape) != expected:
            raise DimensionMismatchError(
                f"Grid storage shape {tuple(grid_shape)} does not match {expected} "
                f"expected for a {width}x{height} reference at sr_s={self.sr_s}, "
                f"n_bins={self.n_bins}"
            )


def _readonly(array):
    array = np.array(array, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BilateralGrid:
    """Homogeneous accumulators stored as (H_g, W_g, B) arrays."""
    value_sum: np.ndarray
    weight: np.ndarray

    def __post_init__(self):
        value_sum = _readonly(self.value_sum)
        weight = _readonly(self.weight)
        if value_sum.ndim != 3 or value_sum.shape != weight.shape:
            raise DimensionMismatchError(
                f"value_sum {value_sum.shape} and weight {weight.shape} must be equal 3D shapes"
            )
        object.__setattr__(self, "value_sum", value_sum)
        object.__setattr__(self, "weight", weight)

    @property
    def shape(self):
        return self.weight.shape

    @property
    def dims(self) -> Tuple[int, int, int]:
        h_g, w_g, bins = self.weight.shape
        return (w_g, h_g, bins)


@dataclass(frozen=True)
class DenseGrid:
    """Normalised grid values in [0, 1] with an occupancy flag per voxel."""
    value: np.ndarray
    occupancy: np.ndarray

    def __post_init__(self):
        value = _readonly(self.value)
        occupancy = np.array(self.occupancy, dtype=bool, copy=True)
        if value.ndim != 3 or value.shape != occupancy.shape:
            raise DimensionMismatchError(
                f"value {value.shape} and occupancy {occupancy.shape} must be equal 3D shapes"
            )
        if value.size and (value.min() < 0.0 or value.max() > 1.0):
            raise ImageValueError(
                f"Dense grid values must lie in [0, 1], got [{value.min()}, {value.max()}]"
            )
        occupancy.setflags(write=False)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "occupancy", occupancy)

    @classmethod
    def full(cls, value):
        value = np.asarray(value, dtype=np.float64)
        return cls(value, np.ones(value.shape, dtype=bool))

    @property
    def shape(self):
        return self.value.shape

    @property
    def dims(self) -> Tuple[int, int, int]:
        h_g, w_g, bins = self.value.shape
        return (w_g, h_g, bins)
