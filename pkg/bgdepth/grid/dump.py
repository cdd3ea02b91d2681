"""Versioned binary grid dumps and their text summary.

Layout (little-endian): magic ``BGRD``, version u16, dims (W_g, H_g, B) as three u32,
then ``value_sum`` and ``weight`` as float64 in (H_g, W_g, B) row-major order.
"""
import struct
from pathlib import Path

import numpy as np
from pydantic import BaseModel

from bgdepth.exceptions import GridFormatError, UnwritablePathError
from bgdepth.grid.types import BilateralGrid

GRID_MAGIC = b"BGRD"
GRID_VERSION = 1
_HEADER = struct.Struct("<4sH3I")


class GridSummary(BaseModel):
    dims: tuple
    occupancy_fraction: float
    total_weight: float
    total_value: float

    def render(self) -> str:
        w_g, h_g, bins = self.dims
        return "\n".join([
            f"dims={w_g}x{h_g}x{bins}",
            f"occupancy={self.occupancy_fraction:.6f}",
            f"weight_total={self.total_weight:.6f}",
            f"value_total={self.total_value:.6f}",
        ])


def summarize(grid: BilateralGrid) -> GridSummary:
    return GridSummary(
        dims=grid.dims,
        occupancy_fraction=float((grid.weight > 0).mean()),
        total_weight=float(grid.weight.sum()),
        total_value=float(grid.value_sum.sum()),
    )


def write_grid(path, grid: BilateralGrid):
    header = _HEADER.pack(GRID_MAGIC, GRID_VERSION, *grid.dims)
    try:
        with open(path, "wb") as handle:
            handle.write(header)
            handle.write(grid.value_sum.astype("<f8").tobytes())
            handle.write(grid.weight.astype("<f8").tobytes())
    except OSError as e:
        raise UnwritablePathError(f"Cannot write grid dump {path}: {e}") from e


def read_grid(path) -> BilateralGrid:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise GridFormatError(f"Cannot read grid dump {path}: {e}") from e
    if len(blob) < _HEADER.size:
        raise GridFormatError(f"{path}: too short for a grid header")
    magic, version, w_g, h_g, bins = _HEADER.unpack_from(blob)
    if magic != GRID_MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    if version != GRID_VERSION:
        raise GridFormatError(f"{path}: unsupported grid dump version {version}")
    count = w_g * h_g * bins
    if (len(blob) - _HEADER.size) % 8:
        raise GridFormatError(f"{path}: payload is not a whole number of float64 values")
    payload = np.frombuffer(blob, dtype="<f8", offset=_HEADER.size)
    if payload.size != 2 * count:
        raise GridFormatError(f"{path}: payload holds {payload.size} values, expected {2 * count}")
    shape = (h_g, w_g, bins)
    return BilateralGrid(payload[:count].reshape(shape), payload[count:].reshape(shape))
