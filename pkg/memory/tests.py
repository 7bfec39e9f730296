"""
Tests for cosine similarity and the episodic memory store.
"""

import threading

import numpy as np
from django.test import SimpleTestCase

from memory.services import EpisodicMemory, cosine_similarity
from memory.types import PcaTransform, RecordMetadata
from network.types import LatentVector
from shared.constants import METRIC_EUCLIDEAN
from shared.exceptions import ConfigurationError, ContractViolation, DegenerateInputError, NotFoundError, PersistenceError


def unit(degrees: float) -> np.ndarray:
    radians = np.deg2rad(degrees)
    return np.array([np.cos(radians), np.sin(radians)])


class CosineSimilarityTest(SimpleTestCase):
    """Test cases for cosine_similarity"""

    def test_identity(self):
        """A nonzero vector has similarity 1 with itself"""
        a = np.array([0.3, -2.0, 5.5])
        self.assertAlmostEqual(cosine_similarity(a, a), 1.0, places=12)

    def test_orthogonal(self):
        """Test orthogonal vectors"""
        self.assertEqual(cosine_similarity([1.0, 0.0], [0.0, 1.0]), 0.0)

    def test_hand_value(self):
        """cos((1,1), (1,0)) = 1/sqrt(2)"""
        self.assertAlmostEqual(cosine_similarity([1.0, 1.0], [1.0, 0.0]), 0.7071067811865476, places=12)

    def test_accepts_latent_vectors(self):
        """Test LatentVector arguments"""
        latent = LatentVector(np.array([1.0, 2.0, 3.0, 4.0]))
        self.assertAlmostEqual(cosine_similarity(latent, latent.values * 2), 1.0, places=12)

    def test_zero_norm_is_degenerate(self):
        """Test zero-norm input"""
        with self.assertRaises(DegenerateInputError):
            cosine_similarity([0.0, 0.0], [1.0, 0.0])

    def test_length_mismatch(self):
        """Test length mismatch"""
        with self.assertRaises(ContractViolation):
            cosine_similarity([1.0, 0.0], [1.0, 0.0, 0.0])


class RecordMetadataTest(SimpleTestCase):
    """Test cases for the metadata text block"""

    def test_round_trip(self):
        """Test metadata text round trip"""
        metadata = RecordMetadata(label='slide-right', source='train/17', frame_start=0, frame_stop=5)
        text = metadata.encode(ordinal=4)
        self.assertEqual(
            text, 'label=slide-right\nsource=train/17\nframe_start=0\nframe_stop=5\nordinal=4\n'
        )
        self.assertEqual(RecordMetadata.decode(text), (metadata, 4))

    def test_unlabelled_omits_label(self):
        """Test metadata without a label"""
        text = RecordMetadata(source='x').encode(0)
        self.assertNotIn('label=', text)
        self.assertIsNone(RecordMetadata.decode(text)[0].label)

    def test_unknown_key_rejected(self):
        """Test unknown metadata key"""
        with self.assertRaises(PersistenceError):
            RecordMetadata.decode('colour=red\nordinal=0\n')

    def test_multiline_label_rejected(self):
        """Test labels spanning lines"""
        with self.assertRaises(ContractViolation):
            RecordMetadata(label='a\nb')


class InsertTest(SimpleTestCase):
    """Test cases for EpisodicMemory.insert"""

    def setUp(self):
        """Set up test data"""
        self.memory = EpisodicMemory(dimension=3)

    def test_first_insert(self):
        """Inserting into an empty memory gives size 1 and id 0"""
        self.assertEqual(self.memory.insert([1.0, 2.0, 3.0]), 0)
        self.assertEqual(len(self.memory), 1)

    def test_ids_follow_insertion_order(self):
        """Test ids are dense and follow insertion order"""
        ids = [self.memory.insert(np.full(3, i + 1.0)) for i in range(2)]
        self.assertEqual(ids, [0, 1])
        self.assertEqual([record.ordinal for record in self.memory], [0, 1])

    def test_wrong_length_rejected(self):
        """A wrong-length vector is rejected and the memory is unchanged"""
        self.memory.insert([1.0, 0.0, 0.0])
        with self.assertRaises(ContractViolation):
            self.memory.insert([1.0, 0.0])
        self.assertEqual(len(self.memory), 1)

    def test_vectors_stored_as_float32(self):
        """Test stored vectors are float32"""
        self.memory.insert(np.array([0.1, 0.2, 0.3]))
        record = self.memory.get(0)
        self.assertEqual(record.vector.dtype, np.dtype('<f4'))
        with self.assertRaises(ValueError):
            record.vector[0] = 5.0

    def test_missing_record(self):
        """Test lookup of an absent id"""
        with self.assertRaises(NotFoundError):
            self.memory.get(7)


class QueryTest(SimpleTestCase):
    """Test cases for EpisodicMemory.query ranking and contracts."""

    def setUp(self):
        """Set up test data"""
        self.memory = EpisodicMemory(dimension=2)

    def test_exact_match_scores_one(self):
        """Test an exact match scores 1"""
        self.memory.insert([0.2, 0.9])
        self.memory.insert([3.0, -1.0])
        results = self.memory.query([3.0, -1.0], top_n=1)
        self.assertEqual(results[0].record.id, 1)
        self.assertAlmostEqual(results[0].similarity, 1.0, places=6)

    def test_angles_rank_in_order(self):
        """Unit vectors at 90, 0 and 45 degrees rank 0, 45, 90 with similarities 1, 0.7071, 0"""
        for degrees in (90, 0, 45):
            self.memory.insert(unit(degrees), RecordMetadata(source=f'{degrees}deg'))
        results = self.memory.query(unit(0), top_n=3)
        self.assertEqual([r.record.id for r in results], [1, 2, 0])
        for result, expected in zip(results, (1.0, 0.70710678, 0.0)):
            self.assertAlmostEqual(result.similarity, expected, places=6)

    def test_top_n_larger_than_memory(self):
        """Test top_n larger than the memory"""
        for degrees in (10, 20):
            self.memory.insert(unit(degrees))
        self.assertEqual(len(self.memory.query(unit(0), top_n=5)), 2)

    def test_empty_memory_returns_nothing(self):
        """Test empty memory"""
        self.assertEqual(self.memory.query([1.0, 0.0], top_n=3), [])

    def test_ties_prefer_earlier_insertion(self):
        """Test equal similarities rank by ascending id"""
        for _ in range(3):
            self.memory.insert([1.0, 1.0])
        self.assertEqual([r.record.id for r in self.memory.query([1.0, 1.0], top_n=3)], [0, 1, 2])

    def test_ties_across_magnitudes_and_directions(self):
        """Test [1,0], [2,0] and [0,1] all tie against [1,1] and come back as ids 0, 1, 2"""
        for vector in ([1.0, 0.0], [2.0, 0.0], [0.0, 1.0]):
            self.memory.insert(vector)
        results = self.memory.query([1.0, 1.0], top_n=3)
        self.assertEqual([r.record.id for r in results], [0, 1, 2])
        for result in results:
            self.assertAlmostEqual(result.similarity, 0.70710678, places=6)
        self.assertEqual([r.record.id for r in self.memory.query([1.0, 0.0], top_n=2)], [0, 1])

    def test_invalid_top_n(self):
        """Test top_n below 1"""
        self.memory.insert([1.0, 0.0])
        with self.assertRaises(ConfigurationError):
            self.memory.query([1.0, 0.0], top_n=0)

    def test_pca_required_but_missing(self):
        """Test PCA query without a fitted transform"""
        self.memory.insert([1.0, 0.0])
        with self.assertRaises(ConfigurationError):
            self.memory.query([1.0, 0.0], top_n=1, use_pca=True)

    def test_query_dimension_mismatch(self):
        """Test query length mismatch"""
        with self.assertRaises(ContractViolation):
            self.memory.query([1.0, 0.0, 0.0], top_n=1)

    def test_zero_query_is_degenerate(self):
        """Test zero query vector"""
        self.memory.insert([1.0, 0.0])
        with self.assertRaises(DegenerateInputError):
            self.memory.query([0.0, 0.0], top_n=1)

    def test_euclidean_metric(self):
        """Euclidean scores are negated distances, nearest first"""
        self.memory.insert([10.0, 0.0])
        self.memory.insert([1.0, 1.0])
        results = self.memory.query([1.0, 0.0], top_n=2, metric=METRIC_EUCLIDEAN)
        self.assertEqual([r.record.id for r in results], [1, 0])
        self.assertAlmostEqual(results[0].similarity, -1.0, places=6)
        self.assertAlmostEqual(results[1].similarity, -9.0, places=6)

    def test_unknown_metric(self):
        """Test unknown metric"""
        self.memory.insert([1.0, 0.0])
        with self.assertRaises(ConfigurationError):
            self.memory.query([1.0, 0.0], top_n=1, metric='manhattan')

    def test_identity_pca_matches_plain_query(self):
        """Test an identity transform does not change the ranking"""
        rng = np.random.default_rng(3)
        memory = EpisodicMemory(dimension=4)
        memory.insert_many(rng.normal(size=(6, 4)), [RecordMetadata() for _ in range(6)])
        memory.set_pca(PcaTransform.identity(4))
        query = rng.normal(size=4)
        plain = [r.record.id for r in memory.query(query, top_n=6)]
        projected = [r.record.id for r in memory.query(query, top_n=6, use_pca=True)]
        self.assertEqual(plain, projected)


class QueryPropertyTest(SimpleTestCase):
    """Ranking properties over random memories"""

    def setUp(self):
        """Set up test data"""
        self.rng = np.random.default_rng(11)
        self.vectors = self.rng.normal(size=(12, 6))
        self.query_vector = self.rng.normal(size=6)

    def build(self, vectors) -> EpisodicMemory:
        memory = EpisodicMemory(dimension=6)
        memory.insert_many(vectors, [RecordMetadata(source=str(i)) for i in range(len(vectors))])
        return memory

    def test_ranking_invariant_to_positive_rescaling(self):
        """Test positive rescaling of the query keeps the ranking"""
        scales = self.rng.uniform(0.1, 10.0, size=(12, 1))
        base = [r.record.id for r in self.build(self.vectors).query(self.query_vector, top_n=12)]
        scaled = [r.record.id for r in self.build(self.vectors * scales).query(3.5 * self.query_vector, top_n=12)]
        self.assertEqual(base, scaled)

    def test_full_query_is_consistent_with_pairwise_cosines(self):
        """Test a full query agrees with pairwise cosine similarity"""
        memory = self.build(self.vectors)
        results = memory.query(self.query_vector, top_n=len(memory))
        self.assertEqual(sorted(r.record.id for r in results), list(range(12)))
        scores = [r.similarity for r in results]
        self.assertEqual(scores, sorted(scores, reverse=True))
        for result in results:
            self.assertAlmostEqual(
                result.similarity, cosine_similarity(result.record.vector, self.query_vector), places=10
            )


class ConcurrencyTest(SimpleTestCase):
    """Readers and one writer sharing a memory"""

    def test_queries_never_see_partial_records(self):
        """Test concurrent queries during inserts"""
        memory = EpisodicMemory(dimension=8)
        rng = np.random.default_rng(5)
        vectors = rng.normal(size=(200, 8))
        errors = []

        def writer():
            for vector in vectors:
                memory.insert(vector)

        def reader():
            try:
                for _ in range(50):
                    for result in memory.query(vectors[0], top_n=5):
                        self.assertEqual(result.record.vector.shape, (8,))
            except Exception as e:  # surfaced below
                errors.append(e)

        threads = [threading.Thread(target=writer)] + [threading.Thread(target=reader) for _ in range(4)]
        for thread in threads:
            thread.start()
        for thread in threads:
            thread.join()
        self.assertEqual(errors, [])
        self.assertEqual(len(memory), 200)
        self.assertEqual([record.id for record in memory], list(range(200)))
