"""
End-to-end empirical checks on trained models.

These train real networks for minutes and only run with EPIMEM_SLOW_TESTS=1.
"""

import logging
import tempfile
from unittest import skipUnless

from django.conf import settings
from django.test import SimpleTestCase

from episodes.services import generate_dataset
from episodes.sources import SyntheticEpisodeSource
from episodes.types import DatasetConfig
from evaluation.services import class_similarity_matrix, psnr_curves, retrieval_benchmark, retrieval_sweep
from memory.services import EpisodicMemory
from memory.types import RecordMetadata
from network.config import ModelConfig, TrainingConfig
from network.services import InferenceService, TrainingService
from shared.constants import SPLIT_TRAIN, SPLIT_VALIDATION

logger = logging.getLogger(__name__)

SLOW = skipUnless(settings.EPIMEM_SLOW_TESTS, 'set EPIMEM_SLOW_TESTS=1 to run training acceptance checks')

OVERFIT_STEPS = 2000
DESK_EPOCHS = 12
CHANCE = 1 / 8


@SLOW
class OverfitTest(SimpleTestCase):
    """Test cases for training on a handful of fixed episodes"""

    def test_four_episodes_are_memorized(self):
        """Test loss falls below 10% of its start and reconstruction exceeds 25 dB"""
        with tempfile.TemporaryDirectory() as root:
            dataset = DatasetConfig(train_per_class=1, validation_per_class=1)
            generate_dataset(dataset, master_seed=21, out_path=root)
            episodes = SyntheticEpisodeSource(root).load_split(SPLIT_TRAIN)[:4]

        config = ModelConfig.desk(dropout_rate=0.0, latent_noise=0.0)
        service = TrainingService.from_seed(config, seed=21)
        inference = InferenceService(service.network, service.params)
        initial = inference.evaluate_loss(episodes)['loss']
        summary = None
        for step in range(1, OVERFIT_STEPS + 1):
            service.step(episodes, lr=1e-3)
            if step % 100 == 0:
                summary = inference.validation_summary(episodes)
                logger.info(f"overfit step {step}: loss {summary['loss']:.5f} (initial {initial:.5f})")
                if summary['loss'] < 0.1 * initial and summary['reconstruction_psnr'] > 25.0:
                    break
        self.assertLess(summary['loss'], 0.1 * initial)
        self.assertGreater(summary['reconstruction_psnr'], 25.0)


@SLOW
class DeskScaleTest(SimpleTestCase):
    """Test cases for the desk-scale corpus (8 classes x 50/10 episodes, 32x32, n=10, k=5)"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.TemporaryDirectory()
        generate_dataset(DatasetConfig(), master_seed=7, out_path=cls.tmp.name, workers=4)
        source = SyntheticEpisodeSource(cls.tmp.name)
        train = source.load_split(SPLIT_TRAIN)
        cls.validation = source.load_split(SPLIT_VALIDATION)

        service = TrainingService.from_seed(ModelConfig.desk(), seed=7, training=TrainingConfig())
        result = service.fit(train, cls.validation, DESK_EPOCHS, out_dir=cls.tmp.name + '/run', seed=7)
        cls.inference = InferenceService.from_checkpoint(result.checkpoint)
        cls.latents = cls.inference.encode_many(cls.validation)
        cls.labels = [episode.label for episode in cls.validation]

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()
        super().tearDownClass()

    def test_psnr_beats_mean_frame_baseline(self):
        """Test reconstruction and prediction PSNR against the mean-frame baseline"""
        curve = psnr_curves(self.inference, self.validation)
        k = curve.encoder_length
        self.assertGreaterEqual(
            curve.reconstruction_mean() - float(curve.baseline_mean[:k].mean()), 2.0
        )
        self.assertGreater(curve.model_mean[k], curve.baseline_mean[k])
        self.assertLessEqual(curve.model_mean[-1], curve.model_mean[k])
        self.assertGreater(curve.reconstruction_mean(), curve.prediction_mean())

    def test_intra_class_similarity_dominates(self):
        """Test diagonal mean exceeds off-diagonal mean, with and without PCA"""
        for use_pca in (False, True):
            matrix = class_similarity_matrix(self.latents, self.labels, use_pca=use_pca)
            self.assertGreater(matrix.diagonal_mean() - matrix.off_diagonal_mean(), 0.0)

    def test_retrieval_beats_chance(self):
        """Test first-match precision is at least three times chance"""
        report = retrieval_benchmark(self.latents, self.labels, top_n=3, seed=0)
        self.assertGreaterEqual(report.precision_mean, 3 * CHANCE)
        for row in retrieval_sweep(self.latents, self.labels, seed=0, pca_components=7):
            logger.info(
                f"pca={row.use_pca} metric={row.metric}: precision {row.precision_mean:.4f}, mAP {row.map_mean:.4f}"
            )

    def test_static_scene_recalls_its_class(self):
        """Test most static-scene queries find their class in the top 3"""
        memory = EpisodicMemory(self.latents.shape[1])
        for latent, episode in zip(self.latents, self.validation):
            memory.insert(latent, RecordMetadata(label=episode.label, source=str(episode.episode_id)))
        recalled = 0
        for episode in self.validation:
            query = self.inference.encode_static_scene(episode.frames[0])
            others = [
                result for result in memory.query(query, top_n=4)
                if result.record.metadata.source != str(episode.episode_id)
            ][:3]
            if any(result.record.label == episode.label for result in others):
                recalled += 1
        logger.info(f"static-scene recall: {recalled} of {len(self.validation)} queries hit their class in the top 3")
        self.assertGreater(recalled, len(self.validation) / 2)
