"""
Tests for model configuration and the composite network forward pass.
"""

import numpy as np
from django.test import SimpleTestCase

from network.composite import CompositeNetwork, add_latent_noise
from network.config import ModelConfig, TrainingConfig
from network.types import EpisodeTensor, LatentVector
from shared.constants import MODE_EVAL, MODE_TRAIN
from shared.exceptions import ConfigurationError, ContractViolation
from substrate.rng import RngStream
from substrate.tensor import Tensor


def tiny_config(**overrides) -> ModelConfig:
    """8x8 single-channel network small enough for finite differences."""
    values = dict(
        frame_size=8,
        channels=1,
        sequence_length=3,
        encoder_length=2,
        convlstm_widths=(2,),
        conv_widths=(2,),
        fc_width=4,
        lstm_width=3,
        dropout_rate=0.0,
        dtype='float64'
    )
    values.update(overrides)
    return ModelConfig(**values)


def random_episode(config: ModelConfig, seed: int, episode_id: int = 0) -> EpisodeTensor:
    frames = np.random.default_rng(seed).random((config.sequence_length,) + config.frame_shape)
    return EpisodeTensor(frames.astype(config.numpy_dtype), label='random', episode_id=episode_id)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ============================================================================
# CONFIGURATION
# ============================================================================

class ModelConfigTest(SimpleTestCase):
    """Test cases for ModelConfig"""

    def test_desk_defaults(self):
        """Desk preset: 32x32x3, n=10, k=5, latent 128"""
        config = ModelConfig.desk()
        self.assertEqual(config.frame_shape, (3, 32, 32))
        self.assertEqual((config.sequence_length, config.encoder_length), (10, 5))
        self.assertEqual(config.latent_dim, 128)
        self.assertEqual(config.bottleneck_features, 1024)
        self.assertEqual(config.eta, 0.4)
        self.assertEqual(config.dropout_rate, 0.15)
        self.assertEqual(config.latent_noise, 0.1)

    def test_full_scale_preset_latent(self):
        """Full-scale preset: 128x128 frames and a 2000-dimensional latent"""
        config = ModelConfig.full_scale()
        self.assertEqual(config.frame_size, 128)
        self.assertEqual(config.latent_dim, 2000)

    def test_encoder_length_bounds(self):
        """k must satisfy 1 <= k < n"""
        with self.assertRaises(ConfigurationError):
            ModelConfig(sequence_length=5, encoder_length=5)
        with self.assertRaises(ConfigurationError):
            ModelConfig(encoder_length=0)

    def test_frame_size_multiple_of_downsampling(self):
        """frame_size must be divisible by 2^(stride-2 layers)"""
        with self.assertRaises(ConfigurationError):
            ModelConfig(frame_size=36)

    def test_hyperparameter_ranges(self):
        """dropout <= 0.2, eta in [0, 1], sigma >= 0"""
        for overrides in ({'dropout_rate': 0.25}, {'eta': 1.2}, {'latent_noise': -0.1}, {'dtype': 'float16'}):
            with self.assertRaises(ConfigurationError):
                ModelConfig(**overrides)

    def test_dict_round_trip(self):
        """as_dict / from_dict reproduce the config"""
        config = tiny_config()
        self.assertEqual(ModelConfig.from_dict(config.as_dict()), config)

    def test_unknown_keys_rejected(self):
        """from_dict refuses keys it does not know"""
        values = tiny_config().as_dict()
        values['attention'] = True
        with self.assertRaises(ConfigurationError):
            ModelConfig.from_dict(values)

    def test_training_config_validation(self):
        """TrainingConfig rejects a non-positive batch size"""
        with self.assertRaises(ConfigurationError):
            TrainingConfig(batch_size=0)


# ============================================================================
# TYPES
# ============================================================================

class EpisodeTensorTest(SimpleTestCase):
    """Test cases for EpisodeTensor and LatentVector"""

    def test_pixel_range_enforced(self):
        """Pixels outside [0, 1] are rejected"""
        with self.assertRaises(ContractViolation):
            EpisodeTensor(np.full((3, 1, 8, 8), 1.5))

    def test_check_names_dimension(self):
        """check() reports a wrong frame count"""
        episode = EpisodeTensor(np.zeros((4, 1, 8, 8)), episode_id=7)
        with self.assertRaisesMessage(ContractViolation, 'expected 3 frames'):
            episode.check(tiny_config())

    def test_latent_halves(self):
        """hidden and cell split V in the middle"""
        latent = LatentVector(np.arange(6.0))
        np.testing.assert_array_equal(latent.hidden, [0, 1, 2])
        np.testing.assert_array_equal(latent.cell, [3, 4, 5])

    def test_latent_must_be_finite(self):
        """Non-finite entries are rejected"""
        with self.assertRaises(ContractViolation):
            LatentVector(np.array([1.0, np.nan]))


# ============================================================================
# ENCODER
# ============================================================================

class EncodeTest(SimpleTestCase):
    """Test cases for CompositeNetwork.encode"""

    def setUp(self):
        self.config = tiny_config()
        self.network = CompositeNetwork(self.config)
        self.params = self.network.init_params(RngStream(3))
        self.episode = random_episode(self.config, seed=11)
        self.frames = self.episode.encoder_frames(self.config.encoder_length)

    def test_eval_is_deterministic(self):
        """Identical inputs in eval mode give identical V"""
        first = self.network.encode(self.frames, self.params, MODE_EVAL).data
        second = self.network.encode(self.frames, self.params, MODE_EVAL).data
        np.testing.assert_array_equal(first, second)
        self.assertEqual(first.shape, (self.config.latent_dim,))
        self.assertAlmostEqual(_cosine(first, second), 1.0, places=12)

    def test_flipped_input_changes_latent(self):
        """V(X) differs from V(horizontally flipped X)"""
        original = self.network.encode(self.frames, self.params).data
        flipped = self.network.encode(self.frames[..., ::-1], self.params).data
        self.assertGreater(np.max(np.abs(original - flipped)), 1e-6)

    def test_batched_matches_single(self):
        """A batch encodes each episode as if alone"""
        other = random_episode(self.config, seed=12).encoder_frames(self.config.encoder_length)
        batched = self.network.encode(np.stack([self.frames, other]), self.params).data
        np.testing.assert_allclose(batched[0], self.network.encode(self.frames, self.params).data, atol=1e-12)
        np.testing.assert_allclose(batched[1], self.network.encode(other, self.params).data, atol=1e-12)

    def test_wrong_frame_count(self):
        """Passing n frames to encode is a contract violation"""
        with self.assertRaisesMessage(ContractViolation, 'expected 2 frames'):
            self.network.encode(self.episode.frames, self.params)

    def test_wrong_frame_shape(self):
        """Frames of another size are a contract violation"""
        with self.assertRaises(ContractViolation):
            self.network.encode(np.zeros((2, 1, 16, 16)), self.params)

    def test_unknown_mode(self):
        """Only train and eval are valid modes"""
        with self.assertRaises(ConfigurationError):
            self.network.encode(self.frames, self.params, mode='infer')

    def test_training_dropout_needs_rng(self):
        """Dropout in training mode without a stream is a configuration error"""
        network = CompositeNetwork(tiny_config(dropout_rate=0.1))
        with self.assertRaises(ConfigurationError):
            network.encode(self.frames, network.init_params(RngStream(0)), MODE_TRAIN)

    def test_static_scene_is_tiled_encode(self):
        """encode_static_scene equals encode of the k-fold repeated frame"""
        frame = self.episode.frames[1]
        static = self.network.encode_static_scene(frame, self.params).data
        tiled = self.network.encode(np.stack([frame, frame]), self.params).data
        np.testing.assert_array_equal(static, tiled)
        np.testing.assert_array_equal(static, self.network.encode_static_scene(frame, self.params).data)

    def test_static_scene_shape_checked(self):
        """A frame of the wrong shape is rejected"""
        with self.assertRaises(ContractViolation):
            self.network.encode_static_scene(np.zeros((3, 8, 8)), self.params)


class LatentNoiseTest(SimpleTestCase):
    """Test cases for add_latent_noise"""

    def test_zero_sigma_is_identity(self):
        """sigma = 0 returns the input"""
        latent = Tensor(np.arange(5.0))
        self.assertIs(add_latent_noise(latent, 0.0, RngStream(0)), latent)

    def test_noise_standard_deviation(self):
        """sigma = 0.1 over 10^4 entries: sample std within 3 standard errors of 0.1"""
        latent = Tensor(np.zeros(10_000))
        noisy = add_latent_noise(latent, 0.1, RngStream(5)).data
        standard_error = 0.1 / np.sqrt(2 * 10_000)
        self.assertLess(abs(noisy.std(ddof=1) - 0.1), 3 * standard_error)

    def test_same_stream_state_same_noise(self):
        """Two calls from the same stream state agree"""
        rng = RngStream(9)
        latent = LatentVector(np.ones(8))
        first = add_latent_noise(latent, 0.1, rng.clone())
        second = add_latent_noise(latent, 0.1, rng.clone())
        np.testing.assert_array_equal(first.values, second.values)

    def test_negative_sigma(self):
        """sigma < 0 is a configuration error"""
        with self.assertRaises(ConfigurationError):
            add_latent_noise(Tensor(np.zeros(2)), -1.0, RngStream(0))


# ============================================================================
# DECODERS AND COMPOSITE PASS
# ============================================================================

class DecodeTest(SimpleTestCase):
    """Test cases for decode_reconstruct and decode_predict"""

    def setUp(self):
        self.config = tiny_config()
        self.network = CompositeNetwork(self.config)
        self.params = self.network.init_params(RngStream(4))
        self.latent = np.random.default_rng(1).normal(size=self.config.latent_dim)

    def test_zero_parameters_give_half_grey(self):
        """All-zero parameters force sigmoid(0) = 0.5 everywhere"""
        zeros = self.params.map_values(np.zeros_like)
        reconstruction = self.network.decode_reconstruct(self.latent, zeros).data
        prediction = self.network.decode_predict(self.latent, zeros).data
        np.testing.assert_array_equal(reconstruction, np.full_like(reconstruction, 0.5))
        np.testing.assert_array_equal(prediction, np.full_like(prediction, 0.5))

    def test_output_shapes(self):
        """k reconstructed and n - k predicted frames"""
        reconstruction = self.network.decode_reconstruct(self.latent, self.params)
        prediction = self.network.decode_predict(self.latent, self.params)
        self.assertEqual(reconstruction.shape, (2, 1, 8, 8))
        self.assertEqual(prediction.shape, (1, 1, 8, 8))

    def test_outputs_strictly_inside_unit_interval(self):
        """Sigmoid-bounded pixels lie in (0, 1)"""
        output = self.network.decode_reconstruct(self.latent, self.params).data
        self.assertTrue(np.all(output > 0.0) and np.all(output < 1.0))

    def test_latent_drives_prediction(self):
        """Perturbing V by 1e-2 changes Y_p"""
        base = self.network.decode_predict(self.latent, self.params).data
        moved = self.network.decode_predict(self.latent + 1e-2, self.params).data
        self.assertGreater(np.max(np.abs(base - moved)), 0.0)

    def test_zeroed_latent_changes_outputs(self):
        """Decoders read V: zeroing it changes both outputs"""
        zero = np.zeros_like(self.latent)
        for decode in (self.network.decode_reconstruct, self.network.decode_predict):
            self.assertFalse(np.array_equal(decode(self.latent, self.params).data, decode(zero, self.params).data))

    def test_decoders_share_no_weights(self):
        """Reconstruction and prediction parameters are disjoint"""
        names = self.params.names()
        reconstruct = {n.split('.', 1)[1] for n in names if n.startswith('reconstruct.')}
        predict = {n.split('.', 1)[1] for n in names if n.startswith('predict.')}
        self.assertEqual(reconstruct, predict)
        self.assertFalse(any(n.startswith('decoder.') for n in names))

    def test_forget_gate_bias(self):
        """LSTM forget gates start at +1"""
        d = self.config.lstm_width
        bias = self.params['encoder.lstm.bias'].data
        np.testing.assert_array_equal(bias[d:2 * d], np.ones(d))
        np.testing.assert_array_equal(bias[:d], np.zeros(d))

    def test_wrong_latent_length(self):
        """A latent of another length is a contract violation"""
        with self.assertRaises(ContractViolation):
            self.network.decode_predict(np.zeros(5), self.params)


class ForwardCompositeTest(SimpleTestCase):
    """Test cases for forward_composite"""

    def test_desk_scale_split(self):
        """n=10, k=5: five reconstructed and five predicted frames"""
        config = ModelConfig.desk()
        network = CompositeNetwork(config)
        params = network.init_params(RngStream(0))
        frames = np.random.default_rng(0).random((10, 3, 32, 32)).astype(np.float32)
        output = network.forward_composite(frames, params, MODE_EVAL)
        self.assertEqual(output.reconstruction.shape, (5, 3, 32, 32))
        self.assertEqual(output.prediction.shape, (5, 3, 32, 32))
        self.assertEqual(output.latent.shape, (128,))

    def test_loss_positive_and_repeatable(self):
        """Loss is finite, > 0, and identical across eval calls"""
        config = tiny_config()
        network = CompositeNetwork(config)
        params = network.init_params(RngStream(2))
        episode = random_episode(config, seed=3)
        first = network.forward_composite(episode.frames, params, MODE_EVAL).losses.as_floats()
        second = network.forward_composite(episode.frames, params, MODE_EVAL).losses.as_floats()
        self.assertTrue(np.isfinite(first['loss']))
        self.assertGreater(first['loss'], 0.0)
        self.assertEqual(first, second)

    def test_loss_matches_components(self):
        """The combined loss weights mse and gd by eta"""
        config = tiny_config(eta=0.25)
        network = CompositeNetwork(config)
        params = network.init_params(RngStream(2))
        values = network.forward_composite(random_episode(config, seed=4).frames, params).losses.as_floats()
        self.assertAlmostEqual(values['loss'], 0.75 * values['mse'] + 0.25 * values['gd'], places=12)

    def test_training_mode_uses_noise(self):
        """Training-mode outputs depend on the noise stream; eval does not"""
        config = tiny_config(latent_noise=0.5)
        network = CompositeNetwork(config)
        params = network.init_params(RngStream(2))
        frames = random_episode(config, seed=5).frames
        a = network.forward_composite(frames, params, MODE_TRAIN, RngStream(1)).prediction.data
        b = network.forward_composite(frames, params, MODE_TRAIN, RngStream(2)).prediction.data
        self.assertFalse(np.array_equal(a, b))
        c = network.forward_composite(frames, params, MODE_TRAIN, RngStream(1)).prediction.data
        np.testing.assert_array_equal(a, c)

    def test_wrong_sequence_length(self):
        """Episodes must have n frames"""
        config = tiny_config()
        network = CompositeNetwork(config)
        with self.assertRaises(ContractViolation):
            network.forward_composite(np.zeros((2, 1, 8, 8)), network.init_params(RngStream(0)))
