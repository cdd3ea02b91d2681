import numpy as np

from bgdepth.exceptions import DimensionMismatchError
from bgdepth.imaging.types import DepthMap, ImageGray

SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T
DERM_THRESHOLD = 0.5


def sobel_gradients(values: np.ndarray):
    if values.ndim != 2 or values.shape[0] < 3 or values.shape[1] < 3:
        raise DimensionMismatchError(f"Sobel needs at least a 3x3 image, got {values.shape}")
    padded = np.pad(values, 1, mode="edge")
    height, width = values.shape
    gx = np.zeros(values.shape)
    gy = np.zeros(values.shape)
    for dy in range(3):
        for dx in range(3):
            window = padded[dy:dy + height, dx:dx + width]
            gx += SOBEL_X[dy, dx] * window
            gy += SOBEL_Y[dy, dx] * window
    return gx, gy


def sobel_magnitude(img) -> np.ndarray:
    """Unnormalized Sobel gradient magnitude with clamp-to-edge borders."""
    values = img.data if isinstance(img, (ImageGray, DepthMap)) else np.asarray(img, dtype=np.float64)
    gx, gy = sobel_gradients(values)
    return np.hypot(gx, gy)


def _min_max(values: np.ndarray) -> np.ndarray:
    low, high = values.min(), values.max()
    if high <= low:
        return np.zeros(values.shape)
    return (values - low) / (high - low)


def _normalized_depth(depth: DepthMap, mask: np.ndarray) -> np.ndarray:
    out = np.zeros(depth.shape)
    valid = depth.data[mask]
    if valid.size:
        low, high = valid.min(), valid.max()
        if high > low:
            out[mask] = (valid - low) / (high - low)
    return out


def edge_mask(depth: DepthMap, mask: np.ndarray, threshold: float = DERM_THRESHOLD) -> np.ndarray:
    return (_min_max(sobel_magnitude(_normalized_depth(depth, mask))) > threshold) & mask


def f1_score(positives: np.ndarray, predicted: np.ndarray) -> float:
    """F1 of ``predicted`` against ``positives``; 1 when both are empty, 0 when one is."""
    n_pos, n_pred = int(positives.sum()), int(predicted.sum())
    if n_pos == 0 and n_pred == 0:
        return 1.0
    if n_pos == 0 or n_pred == 0:
        return 0.0
    hits = int((positives & predicted).sum())
    if hits == 0:
        return 0.0
    precision = hits / n_pred
    recall = hits / n_pos
    return 2.0 * precision * recall / (precision + recall)


def derm(gt: DepthMap, pred: DepthMap, threshold: float = DERM_THRESHOLD) -> float:
    """Depth-edge reliability: F1 between thresholded, normalized Sobel magnitudes.

    Both maps are min-max normalized over their jointly valid pixels, their gradient
    magnitudes are min-max normalized again, and edges are magnitudes above
    ``threshold``. Ground-truth edges are the positives.
    """
    if gt.shape != pred.shape:
        raise DimensionMismatchError(f"Depth maps differ in shape: {gt.shape} vs {pred.shape}")
    mask = gt.mask & pred.mask
    return f1_score(edge_mask(gt, mask, threshold), edge_mask(pred, mask, threshold))
