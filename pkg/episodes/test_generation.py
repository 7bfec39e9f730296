"""
Tests for corpus generation and the episode and manifest files.
"""

import hashlib
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase

from episodes.repository import MANIFEST_NAME, EpisodeRepository, ManifestRepository
from episodes.services import EpisodeGenerationService, generate_dataset
from episodes.sources import InMemoryEpisodeSource, SyntheticEpisodeSource
from episodes.types import DatasetConfig
from network.types import EpisodeTensor
from shared.constants import SPLIT_TRAIN, SPLIT_VALIDATION
from shared.exceptions import NotFoundError, PersistenceError

SMALL = DatasetConfig(frame_size=16, channels=1, sequence_length=4, source_frames=8,
                      train_per_class=2, validation_per_class=1)


def corpus_digest(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob('*')):
        if path.is_file():
            digest.update(str(path.relative_to(root)).encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


class GenerateDatasetTest(SimpleTestCase):
    """Test cases for generate_dataset against a temporary directory"""

    def setUp(self):
        """Set up test data"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_writes_manifest_and_episode_files(self):
        """Test generation writes the manifest and one file per entry"""
        manifest = generate_dataset(SMALL, master_seed=3, out_path=self.root / 'data', echo={'command': 'gen-data'})
        self.assertEqual(len(manifest.split(SPLIT_TRAIN)), 16)
        self.assertEqual(len(manifest.split(SPLIT_VALIDATION)), 8)
        self.assertTrue((self.root / 'data' / MANIFEST_NAME).exists())
        for entry in manifest.entries:
            self.assertTrue((self.root / 'data' / entry.path).exists())
        self.assertIn('# command=gen-data', (self.root / 'data' / MANIFEST_NAME).read_text())

    def test_same_master_seed_gives_identical_corpus(self):
        """Test same master seed gives a byte-identical corpus"""
        generate_dataset(SMALL, master_seed=11, out_path=self.root / 'a')
        generate_dataset(SMALL, master_seed=11, out_path=self.root / 'b')
        self.assertEqual(corpus_digest(self.root / 'a'), corpus_digest(self.root / 'b'))

    def test_different_master_seeds_differ(self):
        """Test different master seeds"""
        generate_dataset(SMALL, master_seed=1, out_path=self.root / 'a')
        generate_dataset(SMALL, master_seed=2, out_path=self.root / 'b')
        first = SyntheticEpisodeSource(self.root / 'a').load(0)
        second = SyntheticEpisodeSource(self.root / 'b').load(0)
        self.assertNotEqual(
            hashlib.sha256(first.frames.tobytes()).digest(), hashlib.sha256(second.frames.tobytes()).digest()
        )

    def test_parallel_generation_matches_serial(self):
        """Test four workers produce the same bytes as one"""
        generate_dataset(SMALL, master_seed=4, out_path=self.root / 'serial')
        generate_dataset(SMALL, master_seed=4, out_path=self.root / 'parallel', workers=4)
        self.assertEqual(corpus_digest(self.root / 'serial'), corpus_digest(self.root / 'parallel'))

    def test_failed_write_leaves_no_manifest(self):
        """Test a failed episode write leaves no manifest behind"""
        real_save = EpisodeRepository.save
        calls = []

        def flaky_save(repository, episode, path):
            calls.append(path)
            if len(calls) == 3:
                raise PersistenceError("disk full")
            return real_save(repository, episode, path)

        with patch.object(EpisodeRepository, 'save', flaky_save):
            with self.assertRaises(PersistenceError):
                generate_dataset(SMALL, master_seed=5, out_path=self.root / 'data')
        self.assertFalse((self.root / 'data' / MANIFEST_NAME).exists())

    def test_source_reads_back_rendered_episodes(self):
        """Test the synthetic source loads what was rendered"""
        service = EpisodeGenerationService()
        manifest = service.generate_dataset(SMALL, master_seed=6, out_path=self.root)
        source = SyntheticEpisodeSource(self.root)
        self.assertEqual(source.classes, SMALL.classes)
        self.assertEqual(source.episode_ids(SPLIT_VALIDATION), list(range(16, 24)))
        entry = manifest.entries[5]
        expected = service.render_entry(entry, SMALL)
        loaded = source.load(entry.episode_id)
        np.testing.assert_array_equal(loaded.frames, expected.frames)
        self.assertEqual(loaded.label, entry.label)
        self.assertEqual(len(source.load_split(SPLIT_TRAIN)), 16)


class EpisodeFileTest(SimpleTestCase):
    """Test cases for EpisodeRepository and ManifestRepository"""

    def setUp(self):
        """Set up test data"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)
        self.repository = EpisodeRepository()
        frames = np.random.default_rng(0).uniform(size=(4, 3, 5, 6)).astype(np.float32)
        self.episode = EpisodeTensor(frames, label='slide-up', episode_id=12)

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip(self):
        """Test episode file round trip"""
        path = self.repository.save(self.episode, self.root / 'e.bin')
        loaded = self.repository.load(path)
        self.assertEqual(loaded.frames.tobytes(), self.episode.frames.tobytes())
        self.assertEqual((loaded.label, loaded.episode_id), ('slide-up', 12))

    def test_header_layout(self):
        """Test episode file header layout"""
        blob = self.repository.encode(self.episode)
        self.assertEqual(blob[:4], b'EPIS')
        self.assertEqual(len(blob), 4 + 4 + 8 + 4 + len('slide-up') + 16 + 4 * 360 + 4)

    def test_truncated_file(self):
        """Test truncated episode file"""
        path = self.repository.save(self.episode, self.root / 'e.bin')
        path.write_bytes(path.read_bytes()[:100])
        with self.assertRaises(PersistenceError):
            self.repository.load(path)

    def test_missing_file(self):
        """Test missing episode file"""
        with self.assertRaises(NotFoundError):
            self.repository.load(self.root / 'absent.bin')

    def test_manifest_count_mismatch(self):
        """Test manifest whose count disagrees with its entries"""
        generate_dataset(SMALL, master_seed=0, out_path=self.root)
        path = self.root / MANIFEST_NAME
        path.write_text(path.read_text().replace('train_count=16', 'train_count=17'))
        with self.assertRaisesMessage(PersistenceError, 'train_count=17'):
            ManifestRepository().load(self.root)

    def test_manifest_round_trip(self):
        """Test manifest round trip"""
        manifest = generate_dataset(SMALL, master_seed=9, out_path=self.root)
        loaded = ManifestRepository().load(self.root / MANIFEST_NAME)
        self.assertEqual(loaded.entries, manifest.entries)
        self.assertEqual(loaded.config, SMALL)
        self.assertEqual(loaded.master_seed, 9)


class InMemoryEpisodeSourceTest(SimpleTestCase):
    """Test cases for InMemoryEpisodeSource"""

    def test_splits_and_lookup(self):
        """Test split listing and lookup by id"""
        frames = np.zeros((2, 1, 4, 4), dtype=np.float32)
        train = [EpisodeTensor(frames, label='a', episode_id=0), EpisodeTensor(frames, label='b', episode_id=1)]
        source = InMemoryEpisodeSource({SPLIT_TRAIN: train})
        self.assertEqual(source.classes, ('a', 'b'))
        self.assertEqual(source.episode_ids(SPLIT_TRAIN), [0, 1])
        self.assertEqual(source.episode_ids(SPLIT_VALIDATION), [])
        with self.assertRaises(NotFoundError):
            source.load(5)
