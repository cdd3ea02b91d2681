"""Mean structural similarity between grayscale depth visualizations."""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from bgdepth.exceptions import DimensionMismatchError
from bgdepth.imaging.types import ImageGray

WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1 = 0.01
K2 = 0.03
DYNAMIC_RANGE = 1.0


def gaussian_window(size: int = WINDOW_SIZE, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    radius = size // 2
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    return np.outer(taps, taps)


def _filter_valid(image: np.ndarray, window: np.ndarray) -> np.ndarray:
    patches = sliding_window_view(image, window.shape)
    return np.einsum("ijkl,kl->ij", patches, window)


def ssim_map(a: ImageGray, b: ImageGray) -> np.ndarray:
    """Local SSIM at every position where the window fits entirely inside both images."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"SSIM inputs differ in shape: {a.shape} vs {b.shape}")
    if a.height < WINDOW_SIZE or a.width < WINDOW_SIZE:
        raise DimensionMismatchError(
            f"SSIM needs images of at least {WINDOW_SIZE}x{WINDOW_SIZE}, got {a.width}x{a.height}"
        )
    window = gaussian_window()
    x, y = a.data, b.data
    mu_x = _filter_valid(x, window)
    mu_y = _filter_valid(y, window)
    var_x = _filter_valid(x * x, window) - mu_x ** 2
    var_y = _filter_valid(y * y, window) - mu_y ** 2
    cov = _filter_valid(x * y, window) - mu_x * mu_y
    c1 = (K1 * DYNAMIC_RANGE) ** 2
    c2 = (K2 * DYNAMIC_RANGE) ** 2
    return ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))


def mssim(gt_vis: ImageGray, pred_vis: ImageGray) -> float:
    # rounding can push identical inputs a hair above 1
    return float(min(ssim_map(gt_vis, pred_vis).mean(), 1.0))
