"""
Tests for .epmem persistence.
"""

import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
from django.test import SimpleTestCase

from memory.repository import MemoryRepository, memories_equal
from memory.services import EpisodicMemory
from memory.types import RecordMetadata
from shared.constants import MEMORY_MAGIC
from shared.exceptions import ContractViolation, NotFoundError, PersistenceError


class MemoryRepositoryTest(SimpleTestCase):
    """Test cases for MemoryRepository according to the .epmem layout"""

    def setUp(self):
        """Set up test data"""
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / 'store.epmem'
        self.repository = MemoryRepository()
        rng = np.random.default_rng(4)
        self.memory = EpisodicMemory(dimension=6)
        for index in range(9):
            label = None if index == 8 else f'class-{index % 3}'
            metadata = RecordMetadata(label=label, source=f'train/{index}', frame_start=0, frame_stop=5)
            self.memory.insert(rng.normal(size=6) + index % 3, metadata)

    def tearDown(self):
        self.tmp.cleanup()

    # ====================================
    # Round trips
    # ====================================

    def test_round_trip(self):
        """Save then load reproduces vector bytes, metadata and order"""
        self.repository.save(self.memory, self.path)
        loaded = self.repository.load(self.path)
        self.assertTrue(memories_equal(self.memory, loaded))
        self.assertIsNone(loaded.pca)
        self.assertEqual(loaded.next_id, 9)

    def test_round_trip_with_pca(self):
        """Test records and PCA transform survive save and load"""
        self.memory.fit_pca(num_components=2)
        self.repository.save(self.memory, self.path)
        loaded = self.repository.load(self.path)
        self.assertTrue(memories_equal(self.memory, loaded))
        query = np.linspace(-1.0, 1.0, 6)
        expected = [(r.record.id, r.similarity) for r in self.memory.query(query, top_n=4, use_pca=True)]
        actual = [(r.record.id, r.similarity) for r in loaded.query(query, top_n=4, use_pca=True)]
        self.assertEqual(actual, expected)

    def test_empty_memory_round_trips(self):
        """Test empty memory"""
        empty = EpisodicMemory(dimension=3)
        self.repository.save(empty, self.path)
        loaded = self.repository.load(self.path)
        self.assertEqual(len(loaded), 0)
        self.assertEqual(loaded.dimension, 3)

    def test_inserts_continue_after_load(self):
        """Test ids continue after loading"""
        self.repository.save(self.memory, self.path)
        loaded = self.repository.load(self.path)
        self.assertEqual(loaded.insert(np.ones(6)), 9)

    def test_file_layout_header(self):
        """Test .epmem header layout"""
        blob = self.repository.encode(self.memory)
        self.assertTrue(blob.startswith(MEMORY_MAGIC))
        self.assertEqual(int.from_bytes(blob[8:12], 'little'), 1)
        self.assertEqual(int.from_bytes(blob[12:16], 'little'), 6)
        self.assertEqual(int.from_bytes(blob[16:24], 'little'), 9)

    # ====================================
    # Failures
    # ====================================

    def test_truncated_file_rejected(self):
        """A truncated file fails to load and yields no memory"""
        self.repository.save(self.memory, self.path)
        blob = self.path.read_bytes()
        self.path.write_bytes(blob[:len(blob) - 17])
        with self.assertRaises(PersistenceError):
            self.repository.load(self.path)

    def test_corrupted_byte_fails_checksum(self):
        """Test a flipped byte fails the checksum"""
        self.repository.save(self.memory, self.path)
        blob = bytearray(self.path.read_bytes())
        blob[40] ^= 0xFF
        self.path.write_bytes(bytes(blob))
        with self.assertRaisesMessage(PersistenceError, 'checksum'):
            self.repository.load(self.path)

    def test_version_mismatch_rejected(self):
        """Test unsupported version"""
        with patch('memory.repository.memory_repository.MEMORY_VERSION', 2):
            blob = self.repository.encode(self.memory)
        with self.assertRaisesMessage(PersistenceError, 'version 2'):
            self.repository.decode(blob, 'patched')

    def test_missing_file(self):
        """Test missing memory file"""
        with self.assertRaises(NotFoundError):
            self.repository.load(self.path)

    def test_load_or_create(self):
        """Test load_or_create creates, loads and checks the dimension"""
        created = self.repository.load_or_create(self.path, dimension=6)
        self.assertEqual(len(created), 0)
        self.repository.save(self.memory, self.path)
        self.assertEqual(len(self.repository.load_or_create(self.path, dimension=6)), 9)
        with self.assertRaises(ContractViolation):
            self.repository.load_or_create(self.path, dimension=5)
