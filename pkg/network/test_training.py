"""
Tests for training steps, fitting and checkpoints.
"""

import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase

from network.config import TrainingConfig
from network.repository import CheckpointRepository, read_csv
from network.services import InferenceService, TrainingService
from network.tests import random_episode, tiny_config
from network.types import EpisodeTensor
from shared.exceptions import ContractViolation, NotFoundError, NumericalError, PersistenceError


def constant_episode(config, value: float, episode_id: int = 0) -> EpisodeTensor:
    frames = np.full((config.sequence_length,) + config.frame_shape, value, dtype=config.numpy_dtype)
    return EpisodeTensor(frames, label='flat', episode_id=episode_id)


class TrainStepTest(SimpleTestCase):
    """Test cases for TrainingService.train_step"""

    def setUp(self):
        self.config = tiny_config()
        self.batch = [random_episode(self.config, seed=s, episode_id=s) for s in range(3)]

    def test_overfits_single_episode(self):
        """50 steps on one fixed episode cut the loss by at least 30%"""
        service = TrainingService.from_seed(self.config, seed=5)
        episode = [constant_episode(self.config, 0.1)]
        losses = [service.train_step(episode, lr=1e-2) for _ in range(50)]
        final = InferenceService(service.network, service.params).evaluate_loss(episode)['loss']
        self.assertLessEqual(final, 0.7 * losses[0])

    def test_zero_learning_rate(self):
        """lr = 0 leaves parameters and the eval loss unchanged"""
        service = TrainingService.from_seed(self.config, seed=6)
        before = service.params.copy()
        inference = InferenceService(service.network, service.params)
        loss_before = inference.evaluate_loss(self.batch)
        service.train_step(self.batch, lr=0.0)
        self.assertTrue(service.params.equals(before))
        self.assertEqual(inference.evaluate_loss(self.batch), loss_before)
        self.assertEqual(service.adam.t, 1)

    def test_identical_seeds_identical_traces(self):
        """Two runs from the same seed produce the same losses"""
        traces = []
        for _ in range(2):
            service = TrainingService.from_seed(tiny_config(dropout_rate=0.1), seed=8)
            traces.append([service.train_step(self.batch, lr=1e-3) for _ in range(3)])
        self.assertEqual(traces[0], traces[1])

    def test_gradients_are_clipped(self):
        """The update sees a global gradient norm of at most clip_norm"""
        service = TrainingService.from_seed(self.config, seed=9, training=TrainingConfig(clip_norm=1e-3))
        result = service.step(self.batch, lr=1e-3)
        self.assertGreater(result.grad_norm, 1e-3)
        self.assertLessEqual(service.params.global_grad_norm(), 1e-3 * (1 + 1e-9))

    def test_non_finite_loss_aborts(self):
        """A NaN loss raises with diagnostics and leaves parameters untouched"""
        service = TrainingService.from_seed(self.config, seed=10)
        service.params['predict.output.bias'].data[0] = np.nan
        before = service.params.copy()
        with self.assertRaisesMessage(NumericalError, 'batch indices [0, 1, 2]'):
            service.train_step(self.batch, lr=1e-3)
        for name in before:
            np.testing.assert_array_equal(service.params[name].data, before[name].data)
        self.assertEqual(service.adam.t, 0)

    def test_empty_batch(self):
        """An empty batch is a contract violation"""
        service = TrainingService.from_seed(self.config, seed=11)
        with self.assertRaises(ContractViolation):
            service.train_step([], lr=1e-3)


class FitTest(SimpleTestCase):
    """Test cases for TrainingService.fit and checkpoint persistence"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name)
        self.config = tiny_config(dtype='float32')
        self.train = [random_episode(self.config, seed=s, episode_id=s) for s in range(5)]
        self.validation = [random_episode(self.config, seed=100 + s, episode_id=100 + s) for s in range(2)]
        self.repository = CheckpointRepository()

    def tearDown(self):
        self.tmp.cleanup()

    def test_zero_epochs_saves_initial_parameters(self):
        """epochs = 0 writes the initial checkpoint and an empty trace"""
        service = TrainingService.from_seed(self.config, seed=1)
        initial = service.params.copy()
        result = service.fit(self.train, self.validation, epochs=0, out_dir=self.out, seed=1)
        self.assertEqual(result.trace, [])
        self.assertEqual(result.checkpoint.name, 'checkpoint-epoch-0000.ckpt')
        restored = self.repository.load(result.checkpoint).to_params()
        self.assertTrue(restored.equals(initial))
        self.assertEqual(read_csv(self.out / 'training.csv'), [])

    def test_epoch_logs_and_checkpoints(self):
        """One epoch of batch size 2 over 5 episodes logs 3 steps and one validation row"""
        service = TrainingService.from_seed(self.config, seed=2, training=TrainingConfig(batch_size=2))
        result = service.fit(self.train, self.validation, epochs=1, out_dir=self.out, seed=2, echo={'source': 'test'})
        rows = read_csv(self.out / 'training.csv')
        self.assertEqual([row['step'] for row in rows], ['0', '1', '2'])
        self.assertEqual(float(rows[0]['lr']), 1e-3)
        self.assertEqual(len(read_csv(self.out / 'validation.csv')), 1)
        self.assertEqual(len(self.repository.list_checkpoints(self.out)), 2)
        self.assertEqual(self.repository.latest(self.out), result.checkpoint)
        self.assertIn('# source=test', (self.out / 'training.csv').read_text())

    def test_checkpoint_reproduces_eval_loss(self):
        """A reloaded checkpoint gives bit-identical eval losses"""
        service = TrainingService.from_seed(self.config, seed=3, training=TrainingConfig(batch_size=5))
        result = service.fit(self.train, [], epochs=1, out_dir=self.out, seed=3)
        expected = InferenceService(service.network, service.params).evaluate_loss(self.validation)
        restored = InferenceService.from_checkpoint(result.checkpoint).evaluate_loss(self.validation)
        self.assertEqual(restored, expected)

    def test_checkpoint_directory_resolves_latest(self):
        """from_checkpoint accepts a directory"""
        service = TrainingService.from_seed(self.config, seed=4)
        service.fit(self.train, [], epochs=0, out_dir=self.out, seed=4)
        inference = InferenceService.from_checkpoint(self.out)
        self.assertEqual(inference.config, self.config)

    def test_truncated_checkpoint_rejected(self):
        """Loading a truncated file names the corruption"""
        service = TrainingService.from_seed(self.config, seed=5)
        path = service.fit(self.train, [], epochs=0, out_dir=self.out, seed=5).checkpoint
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) // 2])
        with self.assertRaises(PersistenceError):
            self.repository.load(path)

    def test_version_mismatch_rejected(self):
        """A checkpoint of another format version is refused"""
        service = TrainingService.from_seed(self.config, seed=6)
        with patch('network.repository.checkpoint_repository.CHECKPOINT_VERSION', 99):
            blob = self.repository.encode(service.params, self.config, {})
        with self.assertRaisesMessage(PersistenceError, 'version 99'):
            self.repository.decode(blob, 'patched')

    def test_missing_checkpoint(self):
        """No checkpoint in a directory is reported as not found"""
        with self.assertRaises(NotFoundError):
            self.repository.latest(self.out)

    def test_failed_write_keeps_previous_checkpoint(self):
        """A disk failure aborts fit and leaves the epoch-0 checkpoint readable"""
        service = TrainingService.from_seed(self.config, seed=7)
        real_save = CheckpointRepository.save
        calls = []

        def flaky_save(repository, path, *args, **kwargs):
            calls.append(path)
            if len(calls) > 1:
                raise PersistenceError("disk full")
            return real_save(repository, path, *args, **kwargs)

        with patch.object(CheckpointRepository, 'save', flaky_save):
            with self.assertRaises(PersistenceError):
                service.fit(self.train, [], epochs=1, out_dir=self.out, seed=7)
        self.assertEqual(self.repository.list_checkpoints(self.out), [calls[0]])
        self.repository.load(calls[0])
