"""
Value types passed between the network, the memory and the evaluation apps.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from metrics.losses import LossBreakdown
from shared.exceptions import ContractViolation
from substrate.tensor import Tensor


@dataclass
class EpisodeTensor:
    """
    n frames [n, C, H, W] with pixels in [0, 1].

    The first k frames are the encoder input; the remaining n - k are the
    prediction target.
    """
    frames: np.ndarray
    label: Optional[str] = None
    episode_id: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 4:
            raise ContractViolation(f"EpisodeTensor: expected frames [n, C, H, W], got shape {self.frames.shape}")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise ContractViolation("EpisodeTensor: pixel values must lie in [0, 1]")

    @property
    def length(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_shape(self):
        return self.frames.shape[1:]

    def check(self, config) -> None:
        """
        Verify frame count and extents against a ModelConfig.

        Raises:
            ContractViolation: Naming the first mismatching dimension
        """
        if self.length != config.sequence_length:
            raise ContractViolation(
                f"episode {self.episode_id}: expected {config.sequence_length} frames, got {self.length}"
            )
        if self.frame_shape != config.frame_shape:
            raise ContractViolation(
                f"episode {self.episode_id}: frame shape {self.frame_shape} differs from {config.frame_shape}"
            )

    def encoder_frames(self, k: int) -> np.ndarray:
        return self.frames[:k]

    def future_frames(self, k: int) -> np.ndarray:
        return self.frames[k:]


@dataclass(frozen=True)
class LatentVector:
    """The encoder's code V = h_k || c_k."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 1:
            raise ContractViolation(f"LatentVector: expected a vector, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ContractViolation("LatentVector: entries must be finite")
        object.__setattr__(self, 'values', values)

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def hidden(self) -> np.ndarray:
        return self.values[:len(self) // 2]

    @property
    def cell(self) -> np.ndarray:
        return self.values[len(self) // 2:]

    @classmethod
    def from_tensor(cls, tensor: Tensor) -> 'LatentVector':
        return cls(np.array(tensor.data, copy=True))


@dataclass
class CompositeOutput:
    """
    One forward pass of the composite network.

    Attributes:
        latent: V as a graph node ([2d] or [N, 2d])
        reconstruction: Y_r, the first k frames
        prediction: Y_p, the last n - k frames
        losses: Combined, mse and gradient difference losses over all n frames
    """
    latent: Tensor
    reconstruction: Tensor
    prediction: Tensor
    losses: LossBreakdown
