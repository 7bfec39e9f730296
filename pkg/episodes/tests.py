"""
Tests for frame sampling, the class catalog and episode rendering.
"""

import numpy as np
from django.test import SimpleTestCase

from episodes.catalog import (
    CLASS_NAMES, DEFAULT_CLASSES, MOTION_TRANSLATE, ActionClassSpec, MotionProgram, get_class, resolve_base
)
from episodes.sampling import equally_spaced_indices
from episodes.services import plan_manifest, render_episode
from episodes.types import DatasetConfig
from shared.constants import SPLIT_TRAIN, SPLIT_VALIDATION
from shared.exceptions import ConfigurationError, ContractViolation, GenerationError, NotFoundError


def foreground(frame: np.ndarray) -> np.ndarray:
    """Pixels that differ from the frame's corner pixel (always background)."""
    return np.any(frame != frame[:, :1, :1], axis=0)


def centroid_column(frame: np.ndarray) -> float:
    rows, cols = np.nonzero(foreground(frame))
    return float(cols.mean())


class EquallySpacedIndicesTest(SimpleTestCase):
    """Test cases for equally_spaced_indices"""

    def test_identity(self):
        """Test n equal to m selects every frame"""
        self.assertEqual(equally_spaced_indices(10, 10), list(range(10)))

    def test_hundred_frames(self):
        """Test 10 of 100 frames"""
        self.assertEqual(equally_spaced_indices(100, 10), [0, 11, 22, 33, 44, 55, 66, 77, 88, 99])

    def test_anchored_and_strictly_increasing(self):
        """Test first and last frames are kept and indices increase"""
        for total in range(1, 40):
            for n in range(1, total + 1):
                indices = equally_spaced_indices(total, n)
                self.assertEqual(len(indices), n)
                self.assertEqual(indices[0], 0)
                self.assertEqual(indices[-1], total - 1 if n > 1 else 0)
                self.assertTrue(all(a < b for a, b in zip(indices, indices[1:])))

    def test_too_few_frames(self):
        """Test more frames requested than available"""
        with self.assertRaises(ContractViolation):
            equally_spaced_indices(4, 5)

    def test_zero_frames_requested(self):
        """Test zero frames requested"""
        with self.assertRaises(ContractViolation):
            equally_spaced_indices(4, 0)


class CatalogTest(SimpleTestCase):
    """Test cases for the action class catalog"""

    def test_default_classes(self):
        """Test the default catalog has eight distinct classes"""
        self.assertEqual(len(DEFAULT_CLASSES), 8)
        self.assertEqual([spec.class_id for spec in DEFAULT_CLASSES], list(range(8)))
        self.assertEqual(CLASS_NAMES[:2], ('slide-right', 'slide-left'))

    def test_derived_classes_resolve_to_programs(self):
        """Test derived classes resolve to a base program and transform"""
        for spec in DEFAULT_CLASSES:
            base, _ = resolve_base(spec)
            self.assertIsNotNone(base.motion)

    def test_unknown_class(self):
        """Test unknown class name"""
        with self.assertRaises(NotFoundError):
            get_class('juggling')

    def test_spec_needs_program_or_parent(self):
        """Test a class needs a program or a parent"""
        with self.assertRaises(ConfigurationError):
            ActionClassSpec(9, 'nothing')


class RenderEpisodeTest(SimpleTestCase):
    """Test cases for render_episode on the default catalog and hand-made programs."""

    def setUp(self):
        self.config = DatasetConfig()

    def test_deterministic(self):
        """Test same class and seed render the same frames"""
        first = render_episode(get_class('converge'), seed=42, config=self.config)
        second = render_episode(get_class('converge'), seed=42, config=self.config)
        self.assertEqual(first.frames.tobytes(), second.frames.tobytes())

    def test_different_seeds_differ(self):
        """Test different seeds"""
        first = render_episode(get_class('approach'), seed=1, config=self.config)
        second = render_episode(get_class('approach'), seed=2, config=self.config)
        self.assertNotEqual(first.frames.tobytes(), second.frames.tobytes())

    def test_slide_right_centroid_moves_right(self):
        """The shape's centroid column strictly increases frame to frame"""
        for seed in range(10):
            episode = render_episode(get_class('slide-right'), seed=seed, config=self.config)
            columns = [centroid_column(frame) for frame in episode.frames]
            self.assertTrue(all(a < b for a, b in zip(columns, columns[1:])), (seed, columns))

    def test_zero_speed_program_is_static(self):
        """Test a program without travel renders a still episode"""
        still = ActionClassSpec(99, 'still', MotionProgram(MOTION_TRANSLATE, direction=(1, 0)))
        episode = render_episode(still, seed=3, config=self.config)
        for frame in episode.frames[1:]:
            np.testing.assert_array_equal(frame, episode.frames[0])

    def test_shape_range_and_label(self):
        """Test frame shape, value range and label for every class"""
        for spec in DEFAULT_CLASSES:
            episode = render_episode(spec, seed=spec.class_id, config=self.config, episode_id=5)
            self.assertEqual(episode.frames.shape, (10, 3, 32, 32))
            self.assertEqual(episode.frames.dtype, np.float32)
            self.assertGreaterEqual(episode.frames.min(), 0.0)
            self.assertLessEqual(episode.frames.max(), 1.0)
            self.assertEqual(episode.label, spec.name)
            self.assertEqual(episode.episode_id, 5)
            self.assertTrue(foreground(episode.frames[0]).any())

    def test_every_class_fits_small_canvases(self):
        """Test every class renders on 8x8 and 16x16 canvases"""
        for frame_size in (8, 16):
            config = DatasetConfig(frame_size=frame_size, channels=1, sequence_length=4, source_frames=6)
            for spec in DEFAULT_CLASSES:
                for seed in range(5):
                    episode = render_episode(spec, seed=seed, config=config)
                    self.assertEqual(episode.frames.shape, (4, 1, frame_size, frame_size))

    def test_border_pixels_stay_background(self):
        """Shapes stay at least one pixel inside the canvas"""
        for spec in DEFAULT_CLASSES:
            for seed in range(3):
                frames = render_episode(spec, seed=seed, config=self.config).frames
                mask = np.stack([foreground(frame) for frame in frames])
                self.assertFalse(mask[:, 0, :].any() or mask[:, -1, :].any())
                self.assertFalse(mask[:, :, 0].any() or mask[:, :, -1].any())

    def test_slide_left_mirrors_slide_right(self):
        """Test slide-left is the mirror of slide-right"""
        right = render_episode(get_class('slide-right'), seed=8, config=self.config)
        left = render_episode(get_class('slide-left'), seed=8, config=self.config)
        np.testing.assert_array_equal(left.frames, right.frames[..., ::-1])

    def test_recede_reverses_approach(self):
        """Test recede is approach played backwards"""
        approach = render_episode(get_class('approach'), seed=9, config=self.config)
        recede = render_episode(get_class('recede'), seed=9, config=self.config)
        np.testing.assert_array_equal(recede.frames, approach.frames[::-1])
        sizes = [foreground(frame).sum() for frame in approach.frames]
        self.assertGreater(sizes[-1], sizes[0])

    def test_diverge_reverses_converge(self):
        """Test diverge is converge played backwards"""
        converge = render_episode(get_class('converge'), seed=10, config=self.config)
        diverge = render_episode(get_class('diverge'), seed=10, config=self.config)
        np.testing.assert_array_equal(diverge.frames, converge.frames[::-1])

    def test_program_leaving_canvas_fails(self):
        """Test a program that leaves the canvas raises GenerationError"""
        runaway = ActionClassSpec(
            99, 'runaway', MotionProgram(MOTION_TRANSLATE, direction=(1, 0), travel=(1.5, 1.5))
        )
        with self.assertRaises(GenerationError):
            render_episode(runaway, seed=0, config=self.config)

    def test_grey_frames(self):
        """Test single-channel rendering"""
        config = DatasetConfig(channels=1)
        episode = render_episode(get_class('slide-up'), seed=4, config=config)
        self.assertEqual(episode.frames.shape, (10, 1, 32, 32))


class PlanManifestTest(SimpleTestCase):
    """Test cases for plan_manifest"""

    def test_default_corpus_counts(self):
        """The default config yields 400 train and 80 validation episodes, exactly balanced"""
        manifest = plan_manifest(DatasetConfig(), master_seed=0)
        counts = manifest.counts()
        self.assertEqual(sum(counts[SPLIT_TRAIN].values()), 400)
        self.assertEqual(sum(counts[SPLIT_VALIDATION].values()), 80)
        self.assertEqual(set(counts[SPLIT_TRAIN].values()), {50})
        self.assertEqual(set(counts[SPLIT_VALIDATION].values()), {10})

    def test_seeds_distinct_and_splits_disjoint(self):
        """Test episode seeds are distinct and splits disjoint"""
        manifest = plan_manifest(DatasetConfig(), master_seed=5)
        self.assertEqual(len({entry.seed for entry in manifest.entries}), 480)
        train = {entry.episode_id for entry in manifest.split(SPLIT_TRAIN)}
        validation = {entry.episode_id for entry in manifest.split(SPLIT_VALIDATION)}
        self.assertFalse(train & validation)
        self.assertEqual([entry.episode_id for entry in manifest.entries], list(range(480)))

    def test_master_seed_changes_episode_seeds(self):
        """Test master seed changes episode seeds"""
        first = plan_manifest(DatasetConfig(), master_seed=1)
        second = plan_manifest(DatasetConfig(), master_seed=2)
        self.assertNotEqual([e.seed for e in first.entries], [e.seed for e in second.entries])

    def test_invalid_configs(self):
        """Test invalid dataset configs"""
        for config in (
            DatasetConfig(classes=('slide-right',)),
            DatasetConfig(train_per_class=0),
            DatasetConfig(channels=2),
            DatasetConfig(source_frames=5),
            DatasetConfig(classes=('slide-right', 'juggling')),
        ):
            with self.assertRaises(ConfigurationError):
                plan_manifest(config, master_seed=0)

    def test_negative_master_seed(self):
        """Test negative master seed"""
        with self.assertRaises(ConfigurationError):
            plan_manifest(DatasetConfig(), master_seed=-1)
