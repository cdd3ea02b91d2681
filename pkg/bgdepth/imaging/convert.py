import numpy as np

from bgdepth.imaging.types import DepthMap, ImageGray, ImageRGB

# Rec.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def to_gray(img: ImageRGB) -> ImageGray:
    weights = np.asarray(LUMA_WEIGHTS)
    gray = img.data @ weights
    # weights sum to one
    return ImageGray.clipped(gray)


def as_gray(img) -> ImageGray:
    if isinstance(img, ImageGray):
        return img
    return to_gray(img)


def depth_visualization(depth: DepthMap) -> ImageGray:
    """Min-max normalised grayscale rendering of the valid depths; invalid pixels are 0."""
    vis = np.zeros(depth.shape, dtype=np.float64)
    if depth.n_valid:
        valid = depth.data[depth.mask]
        low, high = valid.min(), valid.max()
        if high > low:
            vis[depth.mask] = (valid - low) / (high - low)
    return ImageGray(vis)
