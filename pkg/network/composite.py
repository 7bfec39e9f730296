"""
Composite encoder / dual-decoder network.

The encoder runs convLSTM and stride-2 convolution layers over the first k
frames, flattens, passes a fully connected layer and a fully connected LSTM,
and emits V = h_k || c_k. Two decoders with separate weights start their
LSTM from (h, c) = split(V), read zero input vectors, and unroll a mirrored
stack of stride-2 transposed convolutions and convLSTMs into frames. V is the
only state the decoders receive from the encoder.

Parameter names are dotted paths: `encoder.*`, `reconstruct.*`, `predict.*`.
"""

import logging
from typing import List, Optional, Tuple, Union

import numpy as np

from metrics.losses import loss_breakdown
from network.config import ModelConfig
from network.types import CompositeOutput, LatentVector
from shared.constants import MODE_CHOICES, MODE_EVAL, MODE_TRAIN, PADDING_SAME
from shared.exceptions import ConfigurationError, ContractViolation
from substrate.ops import (
    GateWeights, conv2d, convlstm_step, dropout, layer_norm, linear, lstm_step, transposed_conv2d
)
from substrate.params import ParamSet, glorot_uniform
from substrate.rng import RngStream
from substrate.tensor import Tensor, concat, stack

logger = logging.getLogger(__name__)

ENCODER = 'encoder'
DECODER_RECONSTRUCT = 'reconstruct'
DECODER_PREDICT = 'predict'
DECODERS = (DECODER_RECONSTRUCT, DECODER_PREDICT)

FORGET_GATE_BIAS = 1.0

State = Tuple[Tensor, Tensor]


def add_latent_noise(
    latent: Union[Tensor, LatentVector],
    sigma: float,
    rng: Optional[RngStream]
) -> Union[Tensor, LatentVector]:
    """
    Add iid Normal(0, sigma) noise to every latent entry.

    Raises:
        ConfigurationError: If sigma is negative, or positive without an RngStream
    """
    if sigma < 0:
        raise ConfigurationError(f"latent noise sigma must be >= 0, got {sigma}")
    if isinstance(latent, LatentVector):
        if sigma == 0:
            return latent
        return LatentVector.from_tensor(add_latent_noise(Tensor(latent.values), sigma, rng))
    if sigma == 0:
        return latent
    if rng is None:
        raise ConfigurationError("latent noise needs an RngStream")
    noise = rng.normal(latent.shape, sigma).astype(latent.dtype, copy=False)
    return latent + Tensor(noise)


class CompositeNetwork:
    """
    Forward passes of the composite network for one ModelConfig.

    The network holds no weights; every call takes the ParamSet produced by
    `init_params` (or loaded from a checkpoint). Inputs may carry a leading
    batch axis: [k, C, H, W] or [N, k, C, H, W].
    """

    def __init__(self, config: ModelConfig):
        self.config = config

    # ------------------------------------------------------------------
    # Parameters
    # ------------------------------------------------------------------

    def init_params(self, rng: RngStream) -> ParamSet:
        """
        Glorot-uniform kernels and matrices, zero biases, forget-gate bias +1,
        unit layer-norm gains.
        """
        cfg = self.config
        params = ParamSet()
        in_channels = cfg.channels
        for i, (recurrent, conv) in enumerate(zip(cfg.convlstm_widths, cfg.conv_widths)):
            self._add_convlstm(params, rng, f'{ENCODER}.convlstm{i}', in_channels, recurrent)
            self._add_conv(params, rng, f'{ENCODER}.conv{i}', recurrent, conv, cfg.kernel_size)
            self._add_norm(params, f'{ENCODER}.conv{i}', (conv, 1, 1))
            in_channels = conv
        self._add_dense(params, rng, f'{ENCODER}.fc', cfg.bottleneck_features, cfg.fc_width)
        self._add_norm(params, f'{ENCODER}.fc', (cfg.fc_width,))
        self._add_lstm(params, rng, f'{ENCODER}.lstm', cfg.fc_width, cfg.lstm_width)

        for decoder in DECODERS:
            self._add_lstm(params, rng, f'{decoder}.lstm', cfg.lstm_width, cfg.lstm_width)
            self._add_norm(params, f'{decoder}.lstm', (cfg.lstm_width,))
            self._add_dense(params, rng, f'{decoder}.fc', cfg.lstm_width, cfg.bottleneck_features)
            self._add_norm(params, f'{decoder}.fc', (cfg.bottleneck_features,))
            in_channels = cfg.bottleneck_channels
            for j, width in enumerate(cfg.decoder_widths):
                self._add_transposed(params, rng, f'{decoder}.tconv{j}', in_channels, width, cfg.kernel_size)
                self._add_norm(params, f'{decoder}.tconv{j}', (width, 1, 1))
                self._add_convlstm(params, rng, f'{decoder}.convlstm{j}', width, width)
                in_channels = width
            self._add_conv(params, rng, f'{decoder}.output', in_channels, cfg.channels, 1)

        logger.info(f"Initialized {len(params)} parameter tensors ({params.num_values()} values)")
        return params

    def _dtype(self) -> np.dtype:
        return self.config.numpy_dtype

    def _add_conv(self, params: ParamSet, rng: RngStream, prefix: str, c_in: int, c_out: int, k: int) -> None:
        shape = (c_out, c_in, k, k)
        params.add(f'{prefix}.kernel', glorot_uniform(rng, shape, c_in * k * k, c_out * k * k, self._dtype()))
        params.add(f'{prefix}.bias', np.zeros(c_out, dtype=self._dtype()))

    def _add_transposed(self, params: ParamSet, rng: RngStream, prefix: str, c_in: int, c_out: int, k: int) -> None:
        shape = (c_in, c_out, k, k)
        params.add(f'{prefix}.kernel', glorot_uniform(rng, shape, c_in * k * k, c_out * k * k, self._dtype()))
        params.add(f'{prefix}.bias', np.zeros(c_out, dtype=self._dtype()))

    def _add_dense(self, params: ParamSet, rng: RngStream, prefix: str, f_in: int, f_out: int) -> None:
        params.add(f'{prefix}.weight', glorot_uniform(rng, (f_in, f_out), f_in, f_out, self._dtype()))
        params.add(f'{prefix}.bias', np.zeros(f_out, dtype=self._dtype()))

    def _add_lstm(self, params: ParamSet, rng: RngStream, prefix: str, f_in: int, d: int) -> None:
        rows = f_in + d
        params.add(f'{prefix}.kernel', glorot_uniform(rng, (rows, 4 * d), rows, 4 * d, self._dtype()))
        bias = np.zeros(4 * d, dtype=self._dtype())
        bias[d:2 * d] = FORGET_GATE_BIAS
        params.add(f'{prefix}.bias', bias)

    def _add_convlstm(self, params: ParamSet, rng: RngStream, prefix: str, c_in: int, c_hidden: int) -> None:
        k = self.config.kernel_size
        shape = (4 * c_hidden, c_in + c_hidden, k, k)
        fan_in = (c_in + c_hidden) * k * k
        params.add(f'{prefix}.kernel', glorot_uniform(rng, shape, fan_in, 4 * c_hidden * k * k, self._dtype()))
        bias = np.zeros(4 * c_hidden, dtype=self._dtype())
        bias[c_hidden:2 * c_hidden] = FORGET_GATE_BIAS
        params.add(f'{prefix}.bias', bias)
        self._add_norm(params, prefix, (c_hidden, 1, 1))

    def _add_norm(self, params: ParamSet, prefix: str, shape: Tuple[int, ...]) -> None:
        params.add(f'{prefix}.ln_gain', np.ones(shape, dtype=self._dtype()))
        params.add(f'{prefix}.ln_bias', np.zeros(shape, dtype=self._dtype()))

    # ------------------------------------------------------------------
    # Layer helpers
    # ------------------------------------------------------------------

    @staticmethod
    def _gates(params: ParamSet, prefix: str) -> GateWeights:
        return GateWeights(params[f'{prefix}.kernel'], params[f'{prefix}.bias'])

    def _norm(self, params: ParamSet, prefix: str, x: Tensor) -> Tensor:
        return layer_norm(x, params[f'{prefix}.ln_gain'], params[f'{prefix}.ln_bias'], self.config.layer_norm_epsilon)

    def _drop(self, x: Tensor, rng: Optional[RngStream], training: bool) -> Tensor:
        return dropout(x, self.config.dropout_rate, rng, training)

    @staticmethod
    def _is_training(mode: str) -> bool:
        if mode not in MODE_CHOICES:
            raise ConfigurationError(f"mode must be one of {MODE_CHOICES}, got {mode!r}")
        return mode == MODE_TRAIN

    def _zeros(self, shape: Tuple[int, ...]) -> Tensor:
        return Tensor(np.zeros(shape, dtype=self._dtype()))

    def _frames_input(self, frames, count: int, op: str) -> Tuple[np.ndarray, bool]:
        """Cast frames to the parameter dtype and add the batch axis if missing."""
        if isinstance(frames, Tensor):
            frames = frames.data
        x = np.asarray(frames, dtype=self._dtype())
        squeeze = x.ndim == 4
        if squeeze:
            x = x[np.newaxis]
        if x.ndim != 5:
            raise ContractViolation(f"{op}: expected frames [T, C, H, W] or [N, T, C, H, W], got shape {x.shape}")
        if x.shape[1] != count:
            raise ContractViolation(f"{op}: expected {count} frames, got {x.shape[1]}")
        if x.shape[2:] != self.config.frame_shape:
            raise ContractViolation(f"{op}: frame shape {x.shape[2:]} differs from {self.config.frame_shape}")
        return x, squeeze

    def _latent_input(self, latent, op: str) -> Tuple[Tensor, bool]:
        if isinstance(latent, LatentVector):
            latent = latent.values
        if not isinstance(latent, Tensor):
            latent = Tensor(np.asarray(latent, dtype=self._dtype()))
        squeeze = latent.ndim == 1
        if squeeze:
            latent = latent.reshape((1, -1))
        if latent.ndim != 2 or latent.shape[1] != self.config.latent_dim:
            raise ContractViolation(
                f"{op}: expected latent length {self.config.latent_dim}, got shape {latent.shape}"
            )
        return latent, squeeze

    # ------------------------------------------------------------------
    # Encoder
    # ------------------------------------------------------------------

    def encode(
        self,
        frames,
        params: ParamSet,
        mode: str = MODE_EVAL,
        rng: Optional[RngStream] = None
    ) -> Tensor:
        """
        Encode the first k frames into V = h_k || c_k.

        Args:
            frames: [k, C, H, W] or [N, k, C, H, W]
            params: Network parameters
            mode: 'train' (dropout on) or 'eval' (deterministic)
            rng: Dropout stream, required in training mode

        Returns:
            V as [2d] (or [N, 2d]) graph node

        Raises:
            ContractViolation: On wrong frame count or shape
        """
        cfg = self.config
        x, squeeze = self._frames_input(frames, cfg.encoder_length, 'encode')
        training = self._is_training(mode)
        x = Tensor(x)
        batch = x.shape[0]

        size = cfg.frame_size
        states: List[State] = []
        for width in cfg.convlstm_widths:
            states.append((self._zeros((batch, width, size, size)), self._zeros((batch, width, size, size))))
            size //= 2
        h = self._zeros((batch, cfg.lstm_width))
        c = self._zeros((batch, cfg.lstm_width))

        for t in range(cfg.encoder_length):
            a = x[:, t]
            for i in range(cfg.num_downsamples):
                prefix = f'{ENCODER}.convlstm{i}'
                hi, ci = convlstm_step(a, states[i][0], states[i][1], self._gates(params, prefix))
                states[i] = (hi, ci)
                a = self._drop(self._norm(params, prefix, hi), rng, training)
                prefix = f'{ENCODER}.conv{i}'
                a = conv2d(a, params[f'{prefix}.kernel'], params[f'{prefix}.bias'], stride=2, padding=PADDING_SAME)
                a = self._drop(self._norm(params, prefix, a).tanh(), rng, training)
            a = linear(a.reshape((batch, -1)), params[f'{ENCODER}.fc.weight'], params[f'{ENCODER}.fc.bias'])
            a = self._drop(self._norm(params, f'{ENCODER}.fc', a).tanh(), rng, training)
            h, c = lstm_step(a, h, c, self._gates(params, f'{ENCODER}.lstm'))

        latent = concat([h, c], axis=1)
        return latent.reshape((cfg.latent_dim,)) if squeeze else latent

    def encode_static_scene(self, frame, params: ParamSet) -> Tensor:
        """
        Encode one frame [C, H, W] repeated k times, in eval mode.

        Raises:
            ContractViolation: If the frame shape differs from the config
        """
        frame = np.asarray(frame, dtype=self._dtype())
        if frame.shape != self.config.frame_shape:
            raise ContractViolation(
                f"encode_static_scene: frame shape {frame.shape} differs from {self.config.frame_shape}"
            )
        tiled = np.repeat(frame[np.newaxis], self.config.encoder_length, axis=0)
        return self.encode(tiled, params, MODE_EVAL)

    # ------------------------------------------------------------------
    # Decoders
    # ------------------------------------------------------------------

    def decode_reconstruct(
        self,
        latent,
        params: ParamSet,
        mode: str = MODE_EVAL,
        rng: Optional[RngStream] = None
    ) -> Tensor:
        """Reconstruct the k encoder frames, in their original order, from V."""
        return self._decode(DECODER_RECONSTRUCT, latent, self.config.encoder_length, params, mode, rng)

    def decode_predict(
        self,
        latent,
        params: ParamSet,
        mode: str = MODE_EVAL,
        rng: Optional[RngStream] = None
    ) -> Tensor:
        """Predict the n - k future frames from V."""
        return self._decode(DECODER_PREDICT, latent, self.config.prediction_length, params, mode, rng)

    def _decode(
        self,
        decoder: str,
        latent,
        steps: int,
        params: ParamSet,
        mode: str,
        rng: Optional[RngStream]
    ) -> Tensor:
        cfg = self.config
        latent, squeeze = self._latent_input(latent, f'decode ({decoder})')
        training = self._is_training(mode)
        batch = latent.shape[0]
        d = cfg.lstm_width

        h, c = latent[:, :d], latent[:, d:]
        blank = self._zeros((batch, d))
        size = cfg.bottleneck_size
        states: List[State] = []
        for width in cfg.decoder_widths:
            size *= 2
            states.append((self._zeros((batch, width, size, size)), self._zeros((batch, width, size, size))))

        frames = []
        for _ in range(steps):
            h, c = lstm_step(blank, h, c, self._gates(params, f'{decoder}.lstm'))
            a = self._drop(self._norm(params, f'{decoder}.lstm', h), rng, training)
            a = linear(a, params[f'{decoder}.fc.weight'], params[f'{decoder}.fc.bias'])
            a = self._drop(self._norm(params, f'{decoder}.fc', a).tanh(), rng, training)
            a = a.reshape((batch, cfg.bottleneck_channels, cfg.bottleneck_size, cfg.bottleneck_size))
            for j in range(cfg.num_downsamples):
                prefix = f'{decoder}.tconv{j}'
                a = transposed_conv2d(
                    a, params[f'{prefix}.kernel'], params[f'{prefix}.bias'], stride=2, padding=PADDING_SAME
                )
                a = self._drop(self._norm(params, prefix, a).tanh(), rng, training)
                prefix = f'{decoder}.convlstm{j}'
                hj, cj = convlstm_step(a, states[j][0], states[j][1], self._gates(params, prefix))
                states[j] = (hj, cj)
                a = self._drop(self._norm(params, prefix, hj), rng, training)
            # output layer: no normalization, sigmoid keeps pixels in (0, 1)
            out = conv2d(a, params[f'{decoder}.output.kernel'], params[f'{decoder}.output.bias'], padding=PADDING_SAME)
            frames.append(out.sigmoid())

        sequence = stack(frames, axis=1)
        return sequence.reshape(sequence.shape[1:]) if squeeze else sequence

    # ------------------------------------------------------------------
    # Composite pass
    # ------------------------------------------------------------------

    def forward_composite(
        self,
        frames,
        params: ParamSet,
        mode: str = MODE_EVAL,
        rng: Optional[RngStream] = None
    ) -> CompositeOutput:
        """
        Encode X_r, decode Y_r and Y_p, and score them against all n frames.

        In training mode the decoders receive V plus Gaussian latent noise.

        Args:
            frames: [n, C, H, W] or [N, n, C, H, W]
            params: Network parameters
            mode: 'train' or 'eval'
            rng: Dropout and noise stream, required in training mode

        Returns:
            CompositeOutput with V, Y_r, Y_p and the loss breakdown
        """
        cfg = self.config
        x, squeeze = self._frames_input(frames, cfg.sequence_length, 'forward_composite')
        training = self._is_training(mode)
        latent = self.encode(x[:, :cfg.encoder_length], params, mode, rng)
        decoder_input = add_latent_noise(latent, cfg.latent_noise, rng) if training else latent
        reconstruction = self.decode_reconstruct(decoder_input, params, mode, rng)
        prediction = self.decode_predict(decoder_input, params, mode, rng)
        losses = loss_breakdown(concat([reconstruction, prediction], axis=1), x, cfg.eta)

        if squeeze:
            latent = latent.reshape((cfg.latent_dim,))
            reconstruction = reconstruction.reshape(reconstruction.shape[1:])
            prediction = prediction.reshape(prediction.shape[1:])
        return CompositeOutput(latent=latent, reconstruction=reconstruction, prediction=prediction, losses=losses)
