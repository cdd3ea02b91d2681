import numpy as np

from bgdepth.exceptions import DimensionMismatchError, InvalidGroundTruthError
from bgdepth.imaging.types import DepthMap


def joint_valid(gt: DepthMap, pred: DepthMap) -> np.ndarray:
    if gt.shape != pred.shape:
        raise DimensionMismatchError(f"Depth maps differ in shape: {gt.shape} vs {pred.shape}")
    mask = gt.mask & pred.mask
    if not mask.any():
        raise InvalidGroundTruthError("No pixel is valid in both depth maps")
    return mask


def rmse(gt: DepthMap, pred: DepthMap) -> float:
    mask = joint_valid(gt, pred)
    return float(np.sqrt(np.mean(np.square(gt.data[mask] - pred.data[mask]))))


def log10_error(gt: DepthMap, pred: DepthMap) -> float:
    """Mean absolute difference of log10 depths over jointly valid pixels."""
    mask = joint_valid(gt, pred)
    return float(np.mean(np.abs(np.log10(gt.data[mask]) - np.log10(pred.data[mask]))))
