"""Bilateral grid construction, normalisation, slicing and the splat-blur-slice filter."""
import math
from typing import List, Tuple, Union

import numpy as np
import structlog
from cachetools import LRUCache, cached

from bgdepth.exceptions import DimensionMismatchError
from bgdepth.grid.types import BilateralGrid, DenseGrid, GridParams
from bgdepth.imaging.types import ImageGray, ImageRGB

logger = structlog.get_logger(__name__)


def _round_half_away(values):
    return np.floor(np.asarray(values, dtype=np.float64) + 0.5).astype(np.int64)


def splat_indices(reference: ImageGray, p: GridParams) -> Tuple[np.ndarray, Tuple[int, int, int]]:
    """Flat voxel index receiving each pixel of ``reference`` (nearest cell, clamped)."""
    height, width = reference.shape
    shape = p.array_shape(width, height)
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    yi = np.clip(_round_half_away(ys / p.sr_s), 0, shape[0] - 1)
    xi = np.clip(_round_half_away(xs / p.sr_s), 0, shape[1] - 1)
    ri = np.clip(_round_half_away(reference.data * (p.n_bins - 1)), 0, p.n_bins - 1)
    flat = (yi * shape[1] + xi) * shape[2] + ri
    return flat.ravel(), shape


def splat_values(values: Union[ImageGray, np.ndarray], reference: ImageGray, p: GridParams) -> BilateralGrid:
    """Accumulate ``(value, 1)`` pairs at the voxels addressed by ``reference``.

    Positions and range bins come from the reference; the accumulated values may come
    from another map of the same size (a joint lift).
    """
    data = values.data if isinstance(values, ImageGray) else np.asarray(values, dtype=np.float64)
    if data.shape != reference.shape:
        raise DimensionMismatchError(
            f"Splatted values {data.shape} and reference {reference.shape} differ in shape"
        )
    flat, shape = splat_indices(reference, p)
    size = int(np.prod(shape))
    value_sum = np.bincount(flat, weights=data.ravel(), minlength=size)
    weight = np.bincount(flat, minlength=size).astype(np.float64)
    return BilateralGrid(value_sum.reshape(shape), weight.reshape(shape))


def lift_gray(img: ImageGray, p: GridParams) -> BilateralGrid:
    return splat_values(img, img, p)


def lift_rgb(img: ImageRGB, p: GridParams) -> List[BilateralGrid]:
    return [lift_gray(channel, p) for channel in img.channels()]


def normalize(g: BilateralGrid) -> DenseGrid:
    occupancy = g.weight > 0
    value = np.zeros(g.shape, dtype=np.float64)
    np.divide(g.value_sum, g.weight, out=value, where=occupancy)
    return DenseGrid(np.clip(value, 0.0, 1.0), occupancy)


def _axis_corners(coord, extent):
    coord = np.clip(coord, 0.0, extent - 1)
    if extent == 1:
        low = np.zeros(coord.shape, dtype=np.int64)
        return low, low, np.zeros(coord.shape)
    low = np.minimum(np.floor(coord).astype(np.int64), extent - 2)
    return low, low + 1, coord - low


def slice_weights(reference: ImageGray, p: GridParams, grid_shape) -> Tuple[np.ndarray, np.ndarray]:
    """Trilinear corners of every reference pixel.

    Returns ``(indices, weights)``, both shaped (H*W, 8); ``indices`` are flat offsets into
    a grid stored as (H_g, W_g, B). The continuous coordinate of pixel (x, y) is
    (y / sr_s, x / sr_s, I(x, y) * (B - 1)), clamped to the grid.
    """
    height, width = reference.shape
    p.check_reference(grid_shape, width, height)
    h_g, w_g, bins = grid_shape
    ys, xs = np.meshgrid(np.arange(height, dtype=np.float64), np.arange(width, dtype=np.float64), indexing="ij")
    y0, y1, fy = _axis_corners(ys.ravel() / p.sr_s, h_g)
    x0, x1, fx = _axis_corners(xs.ravel() / p.sr_s, w_g)
    r0, r1, fr = _axis_corners(reference.data.ravel() * (p.n_bins - 1), bins)
    indices = []
    weights = []
    for yy, wy in ((y0, 1.0 - fy), (y1, fy)):
        for xx, wx in ((x0, 1.0 - fx), (x1, fx)):
            for rr, wr in ((r0, 1.0 - fr), (r1, fr)):
                indices.append((yy * w_g + xx) * bins + rr)
                weights.append(wy * wx * wr)
    return np.stack(indices, axis=1), np.stack(weights, axis=1)


def slice(g: DenseGrid, reference: ImageGray, p: GridParams) -> ImageGray:  # noqa: A001
    """Read a 2D map out of ``g`` at each pixel's (position, reference intensity).

    Corners on unoccupied voxels are dropped and the remaining trilinear weights
    renormalised; on a fully occupied grid this is plain trilinear interpolation.
    """
    indices, weights = slice_weights(reference, p, g.shape)
    occupied = g.occupancy.ravel()[indices]
    weights = np.where(occupied, weights, 0.0)
    total = weights.sum(axis=1)
    numerator = (weights * g.value.ravel()[indices]).sum(axis=1)
    out = np.zeros_like(total)
    np.divide(numerator, total, out=out, where=total > 0)
    return ImageGray.clipped(out.reshape(reference.shape))


@cached(cache=LRUCache(maxsize=64))
def gaussian_kernel(sigma: float) -> np.ndarray:
    """Unit-sum Gaussian taps truncated at 3 sigma; ``sigma == 0`` is the identity tap."""
    if sigma <= 0:
        kernel = np.ones(1)
    else:
        radius = math.ceil(3.0 * sigma)
        offsets = np.arange(-radius, radius + 1, dtype=np.float64)
        kernel = np.exp(-0.5 * (offsets / sigma) ** 2)
        kernel /= kernel.sum()
    kernel.setflags(write=False)
    return kernel


def _blur_axis(array, kernel, axis):
    if kernel.size == 1:
        return array
    radius = kernel.size // 2
    moved = np.moveaxis(array, axis, 0)
    extent = moved.shape[0]
    full = np.zeros((extent + 2 * radius,) + moved.shape[1:])
    for offset, tap in enumerate(kernel):
        full[offset:offset + extent] += tap * moved
    out = full[radius:radius + extent].copy()
    # mass that leaves the grid is folded back onto the border voxel
    out[0] += full[:radius].sum(axis=0)
    out[-1] += full[radius + extent:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def grid_blur(g: BilateralGrid, sigma_s: float, sigma_r: float) -> BilateralGrid:
    """Separable homogeneous Gaussian blur of both accumulators."""
    if sigma_s < 0 or sigma_r < 0:
        raise ValueError(f"Blur sigmas must be non-negative, got {sigma_s}, {sigma_r}")
    spatial = gaussian_kernel(float(sigma_s))
    tonal = gaussian_kernel(float(sigma_r))
    blurred = []
    for accumulator in (g.value_sum, g.weight):
        out = _blur_axis(accumulator, spatial, 0)
        out = _blur_axis(out, spatial, 1)
        out = _blur_axis(out, tonal, 2)
        blurred.append(out)
    return BilateralGrid(*blurred)


def bilateral_filter(img: ImageGray, p: GridParams, sigma_s: float, sigma_r: float) -> ImageGray:
    logger.debug("Bilateral filter", sr_s=p.sr_s, n_bins=p.n_bins, sigma_s=sigma_s, sigma_r=sigma_r)
    return slice(normalize(grid_blur(lift_gray(img, p), sigma_s, sigma_r)), img, p)
