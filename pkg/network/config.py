"""
Architecture and training hyperparameters of the composite network.
"""

from dataclasses import asdict, dataclass, fields, replace
from typing import Any, Dict, Tuple

import numpy as np

from metrics.losses import DEFAULT_ETA
from shared.exceptions import ConfigurationError

SUPPORTED_DTYPES = ('float32', 'float64')
MAX_DROPOUT_RATE = 0.2


@dataclass(frozen=True)
class ModelConfig:
    """
    Shape of the encoder/decoder stack.

    The encoder alternates a convLSTM (`convlstm_widths[i]` channels) with a
    stride-2 convolution (`conv_widths[i]` channels); the decoders mirror it
    with stride-2 transposed convolutions followed by convLSTMs.

    Attributes:
        frame_size: Frame height and width in pixels
        channels: Colour channels per frame
        sequence_length: Frames per episode (n)
        encoder_length: Frames fed to the encoder (k)
        convlstm_widths: Channels of the convLSTM at each resolution
        conv_widths: Output channels of each stride-2 convolution
        kernel_size: Spatial kernel extent of every conv/convLSTM layer
        fc_width: Width of the encoder's fully connected layer
        lstm_width: Hidden width d of the fully connected LSTM (latent is 2d)
        latent_noise: Standard deviation of training-time latent noise
        dropout_rate: Dropout rate of hidden layers in training mode
        eta: Weight of the gradient difference loss
        layer_norm_epsilon: Variance guard of layer normalization
        dtype: 'float32' for training or 'float64' for gradient checks
    """
    frame_size: int = 32
    channels: int = 3
    sequence_length: int = 10
    encoder_length: int = 5
    convlstm_widths: Tuple[int, ...] = (16, 32, 64)
    conv_widths: Tuple[int, ...] = (32, 64, 64)
    kernel_size: int = 3
    fc_width: int = 256
    lstm_width: int = 64
    latent_noise: float = 0.1
    dropout_rate: float = 0.15
    eta: float = DEFAULT_ETA
    layer_norm_epsilon: float = 1e-5
    dtype: str = 'float32'

    def __post_init__(self):
        object.__setattr__(self, 'convlstm_widths', tuple(int(w) for w in self.convlstm_widths))
        object.__setattr__(self, 'conv_widths', tuple(int(w) for w in self.conv_widths))
        self.validate()

    @classmethod
    def desk(cls, **overrides) -> 'ModelConfig':
        """32x32 RGB, n=10, k=5, latent dimension 128."""
        return cls(**overrides)

    @classmethod
    def full_scale(cls, **overrides) -> 'ModelConfig':
        """128x128 RGB, n=10, k=5, latent dimension 2000."""
        values = dict(
            frame_size=128,
            convlstm_widths=(32, 64, 128),
            conv_widths=(64, 128, 128),
            fc_width=2048,
            lstm_width=1000
        )
        values.update(overrides)
        return cls(**values)

    def validate(self) -> None:
        """
        Check every field constraint.

        Raises:
            ConfigurationError: On the first violated constraint
        """
        if self.channels < 1:
            raise ConfigurationError(f"channels must be >= 1, got {self.channels}")
        if not 1 <= self.encoder_length < self.sequence_length:
            raise ConfigurationError(
                f"encoder_length must satisfy 1 <= k < n, got k={self.encoder_length}, n={self.sequence_length}"
            )
        if not self.convlstm_widths or len(self.convlstm_widths) != len(self.conv_widths):
            raise ConfigurationError(
                f"convlstm_widths and conv_widths must be non-empty and of equal length, "
                f"got {self.convlstm_widths} and {self.conv_widths}"
            )
        if min(self.convlstm_widths + self.conv_widths) < 1:
            raise ConfigurationError("layer widths must be positive")
        scale = 2 ** self.num_downsamples
        if self.frame_size < scale or self.frame_size % scale:
            raise ConfigurationError(
                f"frame_size {self.frame_size} must be a positive multiple of 2^{self.num_downsamples}"
            )
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigurationError(f"kernel_size must be a positive odd number, got {self.kernel_size}")
        if self.fc_width < 1 or self.lstm_width < 1:
            raise ConfigurationError("fc_width and lstm_width must be positive")
        if self.latent_noise < 0:
            raise ConfigurationError(f"latent_noise must be >= 0, got {self.latent_noise}")
        if not 0.0 <= self.dropout_rate <= MAX_DROPOUT_RATE:
            raise ConfigurationError(f"dropout_rate must lie in [0, {MAX_DROPOUT_RATE}], got {self.dropout_rate}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigurationError(f"eta must lie in [0, 1], got {self.eta}")
        if self.layer_norm_epsilon <= 0:
            raise ConfigurationError(f"layer_norm_epsilon must be positive, got {self.layer_norm_epsilon}")
        if self.dtype not in SUPPORTED_DTYPES:
            raise ConfigurationError(f"dtype must be one of {SUPPORTED_DTYPES}, got {self.dtype!r}")

    # ------------------------------------------------------------------
    # Derived extents
    # ------------------------------------------------------------------

    @property
    def num_downsamples(self) -> int:
        return len(self.conv_widths)

    @property
    def prediction_length(self) -> int:
        return self.sequence_length - self.encoder_length

    @property
    def latent_dim(self) -> int:
        return 2 * self.lstm_width

    @property
    def frame_shape(self) -> Tuple[int, int, int]:
        return (self.channels, self.frame_size, self.frame_size)

    @property
    def bottleneck_size(self) -> int:
        return self.frame_size // 2 ** self.num_downsamples

    @property
    def bottleneck_channels(self) -> int:
        return self.conv_widths[-1]

    @property
    def bottleneck_features(self) -> int:
        return self.bottleneck_channels * self.bottleneck_size ** 2

    @property
    def decoder_widths(self) -> Tuple[int, ...]:
        return tuple(reversed(self.convlstm_widths))

    @property
    def numpy_dtype(self) -> np.dtype:
        return np.dtype(self.dtype)

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def as_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['convlstm_widths'] = list(self.convlstm_widths)
        values['conv_widths'] = list(self.conv_widths)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'ModelConfig':
        """
        Rebuild a config from `as_dict()` output.

        Raises:
            ConfigurationError: On unknown keys or invalid values
        """
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"Unknown model config keys: {sorted(unknown)}")
        return cls(**values)

    def with_dtype(self, dtype: str) -> 'ModelConfig':
        return replace(self, dtype=dtype)


@dataclass(frozen=True)
class TrainingConfig:
    """
    Optimization settings of a training run.

    The learning rate decays as lr0 * gamma ** (step / steps_per_epoch).
    """
    batch_size: int = 8
    lr0: float = 1e-3
    gamma: float = 0.95
    clip_norm: float = 5.0
    checkpoint_every: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr0 <= 0:
            raise ConfigurationError(f"lr0 must be positive, got {self.lr0}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.clip_norm <= 0:
            raise ConfigurationError(f"clip_norm must be positive, got {self.clip_norm}")
        if self.checkpoint_every < 1:
            raise ConfigurationError(f"checkpoint_every must be >= 1, got {self.checkpoint_every}")
