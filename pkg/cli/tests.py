"""
Tests for run configuration, image output and latent tables.
"""

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase, override_settings

from cli.config import RunConfig, caster_for
from cli.images import encode_frame, frame_filename, quantize, write_frames
from cli.latents import LatentTable, read_latents, write_latents
from shared.exceptions import ConfigurationError, ContractViolation, PersistenceError

DEFAULTS = {
    'seed': 0,
    'lr0': 1e-3,
    'epochs': 20,
    'conv_widths': (32, 64),
    'classes': ('slide-up', 'slide-down'),
    'metric': 'cosine',
    'flag': False,
}


# ============================================================================
# RUN CONFIGURATION
# ============================================================================

class RunConfigTest(SimpleTestCase):
    """Test cases for RunConfig layering and casting."""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'run.cfg'

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, text: str) -> Path:
        self.path.write_text(text)
        return self.path

    def test_defaults_only(self):
        """Test resolution without a file or flags"""
        run_config = RunConfig.resolve(defaults=DEFAULTS)
        self.assertEqual(run_config.values, DEFAULTS)
        self.assertEqual(run_config.seed, 0)

    def test_file_overrides_defaults_and_flags_override_file(self):
        """Test layering: defaults, then file, then flags"""
        path = self.write('# desk run\nseed=5\nlr0=0.01\nepochs=3\n')
        run_config = RunConfig.resolve(path, overrides={'epochs': 7, 'seed': None}, defaults=DEFAULTS)
        self.assertEqual(run_config.seed, 5)
        self.assertEqual(run_config['lr0'], 0.01)
        self.assertEqual(run_config['epochs'], 7)

    def test_values_cast_like_defaults(self):
        """Test file values take the type of their default"""
        path = self.write('conv_widths=8, 16\nclasses=approach,recede\nflag=true\n')
        run_config = RunConfig.resolve(path, defaults=DEFAULTS)
        self.assertEqual(run_config['conv_widths'], (8, 16))
        self.assertEqual(run_config['classes'], ('approach', 'recede'))
        self.assertIs(run_config['flag'], True)

    def test_assignments_beat_file(self):
        """Test --set assignments override the config file"""
        path = self.write('epochs=3\n')
        run_config = RunConfig.resolve(path, assignments={'epochs': '9'}, defaults=DEFAULTS)
        self.assertEqual(run_config['epochs'], 9)

    def test_unknown_key_in_file(self):
        """Test unknown keys in the config file"""
        path = self.write('epochs=3\nlearning_rate=0.1\n')
        with self.assertRaisesMessage(ConfigurationError, 'learning_rate'):
            RunConfig.resolve(path, defaults=DEFAULTS)

    def test_value_that_does_not_cast(self):
        """Test a value that does not cast names its key"""
        path = self.write('epochs=many\n')
        with self.assertRaisesMessage(ConfigurationError, 'epochs'):
            RunConfig.resolve(path, defaults=DEFAULTS)

    def test_unknown_flag_key(self):
        """Test unknown flag keys"""
        with self.assertRaises(ConfigurationError):
            RunConfig.resolve(overrides={'momentum': 0.9}, defaults=DEFAULTS)

    def test_missing_file(self):
        """Test missing config file"""
        with self.assertRaises(OSError):
            RunConfig.resolve(Path(self.tmp.name) / 'absent.cfg', defaults=DEFAULTS)

    def test_echo_names_command_and_file(self):
        """Test echo carries the command and config file"""
        path = self.write('seed=1\n')
        echo = RunConfig.resolve(path, defaults=DEFAULTS).echo('train')
        self.assertEqual(echo['command'], 'train')
        self.assertEqual(echo['config_file'], str(path))
        self.assertEqual(echo['seed'], 1)

    def test_settings_defaults_build_component_configs(self):
        """Test settings defaults build valid model, dataset and training configs"""
        run_config = RunConfig.resolve()
        self.assertEqual(run_config.model_config().latent_dim, 128)
        self.assertEqual(run_config.dataset_config().train_per_class, 50)
        self.assertEqual(run_config.training_config().batch_size, 8)

    @override_settings(EPIMEM_DEFAULTS=dict(DEFAULTS, seed=42))
    def test_settings_supply_defaults(self):
        """Test overridden settings reach the defaults layer"""
        self.assertEqual(RunConfig.resolve().seed, 42)

    def test_caster_for_types(self):
        """Test caster selection per default type"""
        self.assertIs(caster_for(True), bool)
        self.assertIs(caster_for(3), int)
        self.assertIs(caster_for(0.5), float)
        self.assertIs(caster_for('x'), str)
        self.assertEqual(caster_for((1, 2))('4,5'), (4, 5))


# ============================================================================
# IMAGES
# ============================================================================

class ImageOutputTest(SimpleTestCase):
    """Test cases for frame quantization and netpbm encoding"""

    def test_quantization_arithmetic(self):
        """Test rint(255 x) quantization with clipping"""
        frame = np.array([[[0.0, 0.2, 0.5, 1.0, 1.2, -0.1]]])
        self.assertEqual(quantize(frame)[0, :, 0].tolist(), [0, 51, 128, 255, 255, 0])

    def test_grayscale_frame_is_pgm(self):
        """Test single-channel frames encode as P5"""
        frame = np.array([[[0.0, 1.0], [1.0, 0.0]]])
        self.assertEqual(encode_frame(frame), b'P5\n2 2\n255\n' + bytes([0, 255, 255, 0]))

    def test_color_frame_is_interleaved_ppm(self):
        """Test three-channel frames encode as interleaved P6"""
        frame = np.zeros((3, 1, 2))
        frame[0, 0, 0] = 1.0
        frame[2, 0, 1] = 1.0
        self.assertEqual(encode_frame(frame), b'P6\n2 1\n255\n' + bytes([255, 0, 0, 0, 0, 255]))

    def test_other_channel_counts_rejected(self):
        """Test two-channel frames are rejected"""
        with self.assertRaises(ContractViolation):
            encode_frame(np.zeros((2, 4, 4)))

    def test_file_names_follow_role_and_position(self):
        """Test image file names"""
        self.assertEqual(frame_filename('prediction', 6, 3), 'prediction-06.ppm')
        self.assertEqual(frame_filename('reconstruction', 1, 1), 'reconstruction-01.pgm')
        with tempfile.TemporaryDirectory() as root:
            paths = write_frames(root, np.zeros((2, 1, 4, 4)), 'prediction', first_position=3)
            self.assertEqual([path.name for path in paths], ['prediction-03.pgm', 'prediction-04.pgm'])


# ============================================================================
# LATENT TABLES
# ============================================================================

class LatentTableTest(SimpleTestCase):
    """Test cases for write_latents and read_latents"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_exact(self):
        """Test float32 latents survive the CSV round trip exactly"""
        vectors = np.random.default_rng(0).normal(size=(3, 4)).astype(np.float32)
        table = LatentTable([4, 5, 6], ['a', 'b', 'a'], ['train'] * 3, [0] * 3, [5] * 3, vectors)
        path = write_latents(self.root / 'latents.csv', table, echo={'seed': 1})
        loaded = read_latents(path)
        np.testing.assert_array_equal(loaded.vectors, vectors.astype(np.float64))
        self.assertEqual(loaded.labels, ['a', 'b', 'a'])
        self.assertEqual(loaded.source(1), 'train/5')
        self.assertTrue(path.read_text().startswith('# seed=1\n'))

    def test_malformed_table(self):
        """Test malformed and missing latent tables"""
        path = self.root / 'bad.csv'
        path.write_text('episode_id,label\n1,a\n')
        with self.assertRaises(PersistenceError):
            read_latents(path)
        with self.assertRaises(PersistenceError):
            read_latents(self.root / 'absent.csv')
