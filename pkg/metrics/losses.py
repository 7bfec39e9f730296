"""
Training objective: pixel-wise squared error, gradient difference, and their
weighted combination.

Frame sequences are arrays or Tensors shaped [..., m, C, H, W]; each loss sums
over the pixels and channels of a frame and averages over every leading axis
(frames, and episodes when batched).
"""

from dataclasses import dataclass
from typing import Union

import numpy as np

from shared.exceptions import ConfigurationError, ContractViolation
from substrate.tensor import Tensor, as_tensor

DEFAULT_ETA = 0.4

Frames = Union[Tensor, np.ndarray]


@dataclass
class LossBreakdown:
    """Scalar loss tensors of one forward pass."""
    combined: Tensor
    mse: Tensor
    gd: Tensor

    def as_floats(self) -> dict:
        return {'loss': self.combined.item(), 'mse': self.mse.item(), 'gd': self.gd.item()}


def _check_pair(y: Tensor, x: Tensor, op: str) -> None:
    if y.shape != x.shape:
        raise ContractViolation(f"{op}: output shape {y.shape} differs from target shape {x.shape}")
    if y.ndim < 3:
        raise ContractViolation(f"{op}: expected frames of shape [..., C, H, W], got {y.shape}")


def _per_frame_mean(per_pixel: Tensor) -> Tensor:
    per_frame = per_pixel.sum(axis=(-3, -2, -1))
    return per_frame.mean() if per_frame.ndim else per_frame


def mse_loss(y: Frames, x: Frames) -> Tensor:
    """
    (1/m) * sum_i ||y_i - x_i||^2, the norm running over all pixels and channels of frame i.

    Raises:
        ContractViolation: If shapes differ
    """
    y, x = as_tensor(y), as_tensor(x)
    _check_pair(y, x, 'mse_loss')
    return _per_frame_mean((y - x).square())


def gradient_difference_loss(y: Frames, x: Frames) -> Tensor:
    """
    Squared differences between absolute vertical and horizontal image gradients.

    Only interior neighbour pairs are used (no padding); channels are summed.

    Raises:
        ContractViolation: If shapes differ or frames are smaller than 2x2
    """
    y, x = as_tensor(y), as_tensor(x)
    _check_pair(y, x, 'gradient_difference_loss')
    if y.shape[-2] < 2 or y.shape[-1] < 2:
        raise ContractViolation(f"gradient_difference_loss: frames must be at least 2x2, got {y.shape[-2:]}")

    def vertical(t: Tensor) -> Tensor:
        return (t[..., 1:, :] - t[..., :-1, :]).abs()

    def horizontal(t: Tensor) -> Tensor:
        return (t[..., :, 1:] - t[..., :, :-1]).abs()

    vertical_term = _per_frame_mean((vertical(x) - vertical(y)).square())
    horizontal_term = _per_frame_mean((horizontal(x) - horizontal(y)).square())
    return vertical_term + horizontal_term


def weighted_loss(mse, gd, eta: float = DEFAULT_ETA):
    """
    (1 - eta) * mse + eta * gd for floats or Tensors.

    Raises:
        ConfigurationError: If eta is outside [0, 1]
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    return (1.0 - eta) * mse + eta * gd


def combined_loss(y: Frames, x: Frames, eta: float = DEFAULT_ETA) -> Tensor:
    """Weighted combination of mse_loss and gradient_difference_loss."""
    return loss_breakdown(y, x, eta).combined


def loss_breakdown(y: Frames, x: Frames, eta: float = DEFAULT_ETA) -> LossBreakdown:
    """Combined loss together with its two components."""
    if not 0.0 <= eta <= 1.0:
        raise ConfigurationError(f"eta must lie in [0, 1], got {eta}")
    mse = mse_loss(y, x)
    gd = gradient_difference_loss(y, x)
    return LossBreakdown(combined=weighted_loss(mse, gd, eta), mse=mse, gd=gd)
