from bgdepth.grid.bilateral_grid import (  # noqa: F401
    bilateral_filter,
    gaussian_kernel,
    grid_blur,
    lift_gray,
    lift_rgb,
    normalize,
    slice,
    slice_weights,
    splat_values,
)
from bgdepth.grid.dump import GridSummary, read_grid, summarize, write_grid  # noqa: F401
from bgdepth.grid.types import BilateralGrid, DenseGrid, GridParams  # noqa: F401
