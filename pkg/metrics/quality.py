"""
Image quality: PSNR with peak 1.0 and the mean-of-input-frames baseline.
"""

import numpy as np

from shared.constants import PSNR_CAP_DB, PSNR_MSE_FLOOR
from shared.exceptions import ContractViolation


def psnr(y: np.ndarray, x: np.ndarray) -> float:
    """
    Peak signal-to-noise ratio in decibels for pixels in [0, 1].

    Uses the per-pixel mean squared error; below 1e-10 the value is capped at 100 dB.

    Raises:
        ContractViolation: If shapes differ
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != x.shape:
        raise ContractViolation(f"psnr: shape {y.shape} differs from {x.shape}")
    mse = float(np.mean((y - x) ** 2))
    if mse < PSNR_MSE_FLOOR:
        return PSNR_CAP_DB
    return float(-10.0 * np.log10(mse))


def psnr_per_frame(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    """PSNR of every frame of [m, C, H, W] sequences."""
    y = np.asarray(y)
    x = np.asarray(x)
    if y.shape != x.shape:
        raise ContractViolation(f"psnr_per_frame: shape {y.shape} differs from {x.shape}")
    return np.array([psnr(a, b) for a, b in zip(y, x)])


def mean_frame_baseline(frames: np.ndarray) -> np.ndarray:
    """
    Channel-wise pixel mean of k input frames [k, C, H, W] -> [C, H, W].

    Raises:
        ContractViolation: If no frames are given
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or frames.shape[0] == 0:
        raise ContractViolation(f"mean_frame_baseline: expected k >= 1 frames [k, C, H, W], got {frames.shape}")
    return frames.mean(axis=0)
