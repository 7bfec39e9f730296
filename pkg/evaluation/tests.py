"""
Comprehensive tests for retrieval scores, evaluation protocols and report export.
"""

import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from evaluation.exporters import export_report, heatmap_pixels, sidecar_path
from evaluation.retrieval import (
    average_precision_at,
    map_at_3,
    mean_average_precision,
    precision_first_match,
)
from evaluation.services import (
    class_similarity_matrix,
    fold_partitions,
    holdout_retrieval,
    psnr_curves,
    retrieval_benchmark,
    retrieval_sweep,
)
from evaluation.types import FoldResult, PsnrCurve, RankedQuery, RetrievalReport, SimilarityMatrix
from network.repository import read_csv
from network.tests import random_episode, tiny_config
from network.types import EpisodeTensor
from shared.constants import EXPORT_PGM_HEATMAP, METRIC_COSINE, METRIC_EUCLIDEAN, PSNR_CAP_DB
from shared.exceptions import ConfigurationError, ContractViolation


def clustered_latents(classes: int = 8, per_class: int = 10, seed: int = 0):
    """One tight cluster per class along its own axis."""
    rng = np.random.default_rng(seed)
    labels = [f'class-{c}' for c in range(classes) for _ in range(per_class)]
    vectors = np.zeros((classes * per_class, classes))
    for row, label in enumerate(labels):
        vectors[row, int(label.split('-')[1])] = 10.0
    vectors += rng.normal(scale=0.01, size=vectors.shape)
    return vectors, labels


class CopyPredictor:
    """Stand-in model that returns the ground-truth frames."""

    def __init__(self, config):
        self.config = config

    def generate_many(self, episodes):
        return np.stack([episode.frames for episode in episodes])


# ============================================================================
# RETRIEVAL SCORES
# ============================================================================

class PrecisionFirstMatchTest(SimpleTestCase):
    """Test cases for precision_first_match"""

    def test_all_correct(self):
        """Test every first match relevant"""
        ranked = [RankedQuery('a', ('a', 'b'), 3), RankedQuery('b', ('b',), 3)]
        self.assertEqual(precision_first_match(ranked), 1.0)

    def test_none_correct(self):
        """Test no first match relevant"""
        ranked = [RankedQuery('a', ('b', 'a'), 3), RankedQuery('b', ('a',), 3)]
        self.assertEqual(precision_first_match(ranked), 0.0)

    def test_three_of_four(self):
        """Test 3 relevant first matches out of 4 give 0.75"""
        ranked = [
            RankedQuery('a', ('a',), 3),
            RankedQuery('b', ('b',), 3),
            RankedQuery('c', ('c',), 3),
            RankedQuery('d', ('a',), 3),
        ]
        self.assertEqual(precision_first_match(ranked), 0.75)

    def test_empty_result_excluded(self):
        """Test queries without results are excluded with a warning"""
        ranked = [RankedQuery('a', ('a',), 3), RankedQuery('b', (), 3)]
        with self.assertLogs('evaluation.retrieval', level='WARNING'):
            self.assertEqual(precision_first_match(ranked), 1.0)


class AveragePrecisionTest(SimpleTestCase):
    """Test cases for average_precision_at and map_at_3"""

    def test_all_relevant(self):
        """Test AP of three relevant results"""
        self.assertEqual(average_precision_at(RankedQuery('a', ('a', 'a', 'a'), 5)), 1.0)

    def test_only_rank_two_relevant(self):
        """Test AP@3 with the only hit at rank 2 is 1/6"""
        self.assertAlmostEqual(average_precision_at(RankedQuery('a', ('b', 'a', 'c'), 5)), 1 / 6, places=12)

    def test_only_rank_one_relevant(self):
        """Test AP@3 with the only hit at rank 1 is 1/3"""
        self.assertAlmostEqual(average_precision_at(RankedQuery('a', ('a', 'b', 'c'), 5)), 1 / 3, places=12)

    def test_denominator_uses_relevant_in_memory(self):
        """Two relevant records in memory, both found first: AP is 1"""
        self.assertEqual(average_precision_at(RankedQuery('a', ('a', 'a', 'b'), 2)), 1.0)

    def test_nothing_relevant_in_memory(self):
        """Test AP is zero when memory holds no relevant record"""
        query = RankedQuery('a', ('b', 'c', 'd'), 0)
        self.assertEqual(average_precision_at(query), 0.0)
        with self.assertLogs('evaluation.retrieval', level='WARNING'):
            self.assertEqual(map_at_3([query]), 0.0)

    def test_map_is_mean_of_query_ap(self):
        """Test mAP averages per-query AP"""
        ranked = [RankedQuery('a', ('a', 'a', 'a'), 5), RankedQuery('a', ('b', 'a', 'c'), 5)]
        self.assertAlmostEqual(map_at_3(ranked), (1 + 1 / 6) / 2, places=12)

    def test_precision_equals_map_at_one(self):
        """Test precision equals mAP at cutoff 1"""
        rng = np.random.default_rng(3)
        names = ['a', 'b', 'c']
        ranked = [
            RankedQuery(str(rng.choice(names)), tuple(str(name) for name in rng.choice(names, size=3)), 4)
            for _ in range(50)
        ]
        self.assertAlmostEqual(precision_first_match(ranked), mean_average_precision(ranked, cutoff=1), places=12)

    def test_invalid_cutoff(self):
        """Test cutoff below 1"""
        with self.assertRaises(ConfigurationError):
            average_precision_at(RankedQuery('a', ('a',), 1), cutoff=0)


# ============================================================================
# SIMILARITY MATRIX
# ============================================================================

class ClassSimilarityMatrixTest(SimpleTestCase):
    """Test cases for class_similarity_matrix"""

    def test_orthogonal_classes(self):
        """Test orthogonal class clusters give an identity-like matrix"""
        vectors = [[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 3.0]]
        matrix = class_similarity_matrix(vectors, ['a', 'a', 'b', 'b'])
        self.assertEqual(matrix.labels, ('a', 'b'))
        np.testing.assert_allclose(matrix.values, [[1.0, 0.0], [0.0, 1.0]], atol=1e-12)
        self.assertEqual(matrix.counts, (2, 2))

    def test_diagonal_excludes_self_pairs(self):
        """Test diagonal cells skip self pairs"""
        vectors = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]
        matrix = class_similarity_matrix(vectors, ['a', 'a', 'b'])
        self.assertAlmostEqual(matrix.values[0, 0], 0.0, places=12)

    def test_single_member_class_is_undefined(self):
        """Test a single-member class has an undefined diagonal"""
        with self.assertLogs('evaluation.services', level='WARNING'):
            matrix = class_similarity_matrix([[1.0, 0.0], [1.0, 0.1], [0.0, 1.0]], ['a', 'a', 'b'])
        self.assertTrue(np.isnan(matrix.values[1, 1]))
        self.assertFalse(matrix.defined[1, 1])

    def test_symmetric_and_ordered(self):
        """Test symmetry and class order"""
        vectors, labels = clustered_latents(classes=4, per_class=3)
        order = ('class-3', 'class-1', 'class-2', 'class-0')
        matrix = class_similarity_matrix(vectors, labels, classes=order)
        self.assertEqual(matrix.labels, order)
        np.testing.assert_allclose(matrix.values, matrix.values.T)
        self.assertGreater(matrix.diagonal_mean(), matrix.off_diagonal_mean())

    def test_with_pca(self):
        """Test matrix in PCA space"""
        vectors, labels = clustered_latents(classes=4, per_class=3)
        matrix = class_similarity_matrix(vectors, labels, use_pca=True, pca_components=3)
        self.assertGreater(matrix.diagonal_mean(), matrix.off_diagonal_mean())

    def test_unknown_label_in_order(self):
        """Test class order naming an unknown label"""
        with self.assertRaises(ContractViolation):
            class_similarity_matrix([[1.0], [2.0]], ['a', 'b'], classes=['a'])

    def test_needs_two_latents(self):
        """Test fewer than two latents"""
        with self.assertRaises(ContractViolation):
            class_similarity_matrix([[1.0, 0.0]], ['a'])


# ============================================================================
# RETRIEVAL BENCHMARK
# ============================================================================

class FoldPartitionsTest(SimpleTestCase):
    """Test cases for fold_partitions"""

    def test_queries_are_disjoint_and_cover_everything(self):
        """Test query folds are disjoint and cover every item"""
        partitions = fold_partitions(80, 5, 0.8, seed=1)
        queries = np.concatenate([query for _, query in partitions])
        self.assertEqual(sorted(queries.tolist()), list(range(80)))
        for memory, query in partitions:
            self.assertEqual(len(memory), 64)
            self.assertEqual(len(query), 16)
            self.assertFalse(set(memory.tolist()) & set(query.tolist()))

    def test_same_seed_same_partitions(self):
        """Test same seed gives the same partitions"""
        first = fold_partitions(23, 4, 0.5, seed=9)
        second = fold_partitions(23, 4, 0.5, seed=9)
        for (memory_a, query_a), (memory_b, query_b) in zip(first, second):
            np.testing.assert_array_equal(memory_a, memory_b)
            np.testing.assert_array_equal(query_a, query_b)

    def test_uneven_chunks_keep_memory_disjoint(self):
        """Test memory stays disjoint from queries with uneven folds"""
        for memory, query in fold_partitions(23, 5, 0.8, seed=2):
            self.assertFalse(set(memory.tolist()) & set(query.tolist()))

    def test_invalid_settings(self):
        """Test invalid fold settings"""
        for args in ((10, 1, 0.5), (3, 5, 0.5), (10, 5, 0.9), (10, 5, 0.0)):
            with self.assertRaises(ConfigurationError):
                fold_partitions(*args, seed=0)


class RetrievalBenchmarkTest(SimpleTestCase):
    """Test cases for retrieval_benchmark, including the chance-level oracle"""

    def test_separable_latents_score_perfectly(self):
        """Test separable clusters score 1.0 with and without PCA"""
        vectors, labels = clustered_latents()
        for use_pca in (False, True):
            report = retrieval_benchmark(vectors, labels, seed=4, use_pca=use_pca, pca_components=50)
            self.assertEqual(len(report.folds), 5)
            self.assertEqual(report.precision_mean, 1.0)
            self.assertAlmostEqual(report.map_mean, 1.0, places=12)
            self.assertEqual(report.use_pca, use_pca)

    def test_euclidean_metric(self):
        """Test euclidean matching"""
        vectors, labels = clustered_latents()
        report = retrieval_benchmark(vectors, labels, seed=4, metric=METRIC_EUCLIDEAN)
        self.assertEqual(report.precision_mean, 1.0)
        self.assertEqual(report.metric, METRIC_EUCLIDEAN)

    def test_same_seed_same_report(self):
        """Test determinism across seeds and worker counts"""
        rng = np.random.default_rng(0)
        vectors = rng.normal(size=(40, 6))
        labels = [f'c{i % 4}' for i in range(40)]
        first = retrieval_benchmark(vectors, labels, seed=12)
        second = retrieval_benchmark(vectors, labels, seed=12, workers=4)
        self.assertEqual(first.folds, second.folds)
        self.assertEqual(first.echo, second.echo)

    def test_echo_records_settings(self):
        """Test the report echo"""
        vectors, labels = clustered_latents(classes=3, per_class=5)
        report = retrieval_benchmark(vectors, labels, folds=5, top_n=2, seed=8)
        self.assertEqual(report.echo['seed'], 8)
        self.assertEqual(report.echo['top_n'], 2)
        self.assertEqual(report.echo['metric'], METRIC_COSINE)
        self.assertFalse(report.echo['use_pca'])

    def test_random_labels_score_at_chance(self):
        """
        With labels independent of latents the top match is a random stored
        record, so precision is (members - 1) / (N - 1) = 9/79 per class of 10.
        """
        trials = 200
        rng = np.random.default_rng(2024)
        names = np.repeat([f'class-{c}' for c in range(8)], 10)
        precisions = []
        for trial in range(trials):
            vectors = rng.normal(size=(80, 16))
            labels = [str(name) for name in rng.permutation(names)]
            precisions.append(retrieval_benchmark(vectors, labels, seed=trial).precision_mean)
        mean = float(np.mean(precisions))
        sigma = float(np.std(precisions)) / np.sqrt(trials)
        self.assertLess(abs(mean - 9 / 79), 3 * sigma)
        self.assertLess(abs(mean - 1 / 8), 0.02)

    def test_singleton_class_queries_excluded(self):
        """Test queries of single-member classes are excluded"""
        vectors, labels = clustered_latents(classes=3, per_class=5)
        vectors = np.vstack([vectors, np.full((1, 3), 1.0)])
        labels = labels + ['lonely']
        with self.assertLogs('evaluation.services', level='WARNING'):
            report = retrieval_benchmark(vectors, labels, seed=0)
        self.assertEqual(sum(result.excluded for result in report.folds), 1)
        self.assertEqual(sum(result.queries for result in report.folds), 15)
        self.assertEqual(report.precision_mean, 1.0)

    def test_invalid_settings(self):
        """Test invalid fold count, top_n, metric and label length"""
        vectors, labels = clustered_latents(classes=2, per_class=5)
        with self.assertRaises(ConfigurationError):
            retrieval_benchmark(vectors, labels, folds=1)
        with self.assertRaises(ConfigurationError):
            retrieval_benchmark(vectors, labels, top_n=0)
        with self.assertRaises(ConfigurationError):
            retrieval_benchmark(vectors, labels, metric='manhattan')
        with self.assertRaises(ContractViolation):
            retrieval_benchmark(vectors, labels[:-1])


class RetrievalSweepTest(SimpleTestCase):
    """Test cases for retrieval_sweep"""

    def test_reports_every_combination(self):
        """Test the sweep reports all four combinations in order"""
        vectors, labels = clustered_latents(classes=4, per_class=5)
        reports = retrieval_sweep(vectors, labels, seed=3, pca_components=3)
        self.assertEqual(
            [(report.use_pca, report.metric) for report in reports],
            [(False, METRIC_COSINE), (False, METRIC_EUCLIDEAN), (True, METRIC_COSINE), (True, METRIC_EUCLIDEAN)]
        )
        for report in reports:
            self.assertEqual(report.precision_mean, 1.0)


class HoldoutRetrievalTest(SimpleTestCase):
    """Test cases for holdout_retrieval"""

    def test_explicit_split(self):
        """Test an explicit memory and query split"""
        memory, memory_labels = clustered_latents(classes=3, per_class=4, seed=1)
        queries, query_labels = clustered_latents(classes=3, per_class=2, seed=2)
        report = holdout_retrieval(memory, memory_labels, queries, query_labels, top_n=3)
        self.assertEqual(len(report.folds), 1)
        self.assertEqual(report.folds[0].queries, 6)
        self.assertEqual(report.folds[0].memory_size, 12)
        self.assertEqual(report.precision_mean, 1.0)
        self.assertAlmostEqual(report.map_mean, 1.0, places=12)

    def test_with_pca_components(self):
        """Test holdout matching on principal components"""
        memory, memory_labels = clustered_latents(classes=3, per_class=4, seed=1)
        queries, query_labels = clustered_latents(classes=3, per_class=2, seed=2)
        report = holdout_retrieval(memory, memory_labels, queries, query_labels, pca_components=2)
        self.assertTrue(report.use_pca)
        self.assertEqual(report.echo['pca_components'], 2)
        self.assertEqual(report.precision_mean, 1.0)

    def test_only_classmate_in_top_three_at_rank_two(self):
        """Test a query whose single top-3 hit sits at rank 2 scores precision 0 and AP@3 1/6"""
        memory = np.array([[1.0, 0.0], [1.0, 0.1], [1.0, 0.3], [0.0, 1.0], [-1.0, 0.5]])
        memory_labels = ['b', 'a', 'c', 'a', 'a']
        report = holdout_retrieval(memory, memory_labels, np.array([[1.0, 0.0]]), ['a'], top_n=3)
        self.assertEqual(report.precision_mean, 0.0)
        self.assertAlmostEqual(report.map_mean, 1 / 6, places=12)

    def test_dimension_mismatch(self):
        """Test memory and query dimensions differ"""
        with self.assertRaises(ContractViolation):
            holdout_retrieval(np.ones((2, 3)), ['a', 'b'], np.ones((1, 4)), ['a'])


# ============================================================================
# PSNR CURVES
# ============================================================================

class PsnrCurvesTest(SimpleTestCase):
    """Test cases for psnr_curves with stub predictors"""

    def setUp(self):
        """Set up test data"""
        self.config = tiny_config()

    def test_copy_predictor_is_capped(self):
        """Test a perfect predictor reaches the PSNR cap"""
        episodes = [random_episode(self.config, seed) for seed in range(3)]
        curve = psnr_curves(CopyPredictor(self.config), episodes)
        np.testing.assert_array_equal(curve.model_mean, np.full(3, PSNR_CAP_DB))
        np.testing.assert_array_equal(curve.model_std, np.zeros(3))
        self.assertEqual(curve.episodes, 3)
        self.assertEqual(list(curve.kinds()), ['reconstruction', 'reconstruction', 'prediction'])

    def test_static_episode_baseline_is_capped(self):
        """Test the baseline of a still episode reaches the cap"""
        frame = np.random.default_rng(1).random(self.config.frame_shape)
        frames = np.stack([frame] * self.config.sequence_length).astype(self.config.numpy_dtype)
        curve = psnr_curves(CopyPredictor(self.config), [EpisodeTensor(frames, label='still')])
        np.testing.assert_array_equal(curve.baseline_mean, np.full(3, PSNR_CAP_DB))

    def test_baseline_below_cap_for_moving_frames(self):
        """Test the baseline of moving frames"""
        curve = psnr_curves(CopyPredictor(self.config), [random_episode(self.config, 5)])
        self.assertTrue(np.all(curve.baseline_mean < PSNR_CAP_DB))

    def test_config_mismatch(self):
        """Test episodes that do not match the model config"""
        other = tiny_config(frame_size=16)
        with self.assertRaises(ContractViolation):
            psnr_curves(CopyPredictor(self.config), [random_episode(other, 0)])

    def test_no_episodes(self):
        """Test empty episode list"""
        with self.assertRaises(ContractViolation):
            psnr_curves(CopyPredictor(self.config), [])


# ============================================================================
# EXPORT
# ============================================================================

class ExportReportTest(SimpleTestCase):
    """Test cases for CSV and heatmap export."""

    def setUp(self):
        """Set up test data"""
        self.tmp = tempfile.TemporaryDirectory()
        self.root = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def test_retrieval_csv_round_trip(self):
        """Test retrieval CSV round trip"""
        vectors, labels = clustered_latents(classes=3, per_class=5)
        report = retrieval_benchmark(vectors, labels, seed=5)
        path = export_report(report, self.root / 'retrieval.csv', echo={'command': 'eval-retrieval'})
        rows = read_csv(path)
        self.assertEqual(len(rows), 7)
        self.assertEqual([row['fold'] for row in rows[-2:]], ['mean', 'std'])
        for row, result in zip(rows, report.folds):
            self.assertAlmostEqual(float(row['precision']), result.precision, delta=1e-6)
            self.assertAlmostEqual(float(row['mean_ap']), result.mean_ap, delta=1e-6)
        text = path.read_text()
        self.assertIn('# command=eval-retrieval', text)
        self.assertIn('# seed=5', text)

    def test_sweep_rows(self):
        """Test sweep export row count"""
        vectors, labels = clustered_latents(classes=3, per_class=5)
        reports = retrieval_sweep(vectors, labels, seed=1, pca_components=2)
        rows = read_csv(export_report(reports, self.root / 'sweep.csv'))
        self.assertEqual(len(rows), 4 * 7)
        self.assertEqual({(row['use_pca'], row['metric']) for row in rows}, {
            ('False', METRIC_COSINE), ('False', METRIC_EUCLIDEAN), ('True', METRIC_COSINE), ('True', METRIC_EUCLIDEAN)
        })

    def test_empty_report_is_header_only(self):
        """Test empty report"""
        path = export_report(RetrievalReport(), self.root / 'empty.csv')
        self.assertEqual(
            path.read_text(), 'use_pca,metric,top_n,fold,precision,mean_ap,queries,memory_size,excluded\n'
        )

    def test_matrix_csv_round_trip(self):
        """Test matrix CSV round trip"""
        values = np.array([[0.9, 0.123456789], [0.123456789, float('nan')]])
        rows = read_csv(export_report(SimilarityMatrix(('a', 'b'), values), self.root / 'matrix.csv'))
        self.assertEqual([row['label'] for row in rows], ['a', 'b'])
        self.assertAlmostEqual(float(rows[0]['b']), 0.123456789, delta=1e-6)
        self.assertEqual(rows[1]['b'], 'nan')

    def test_identity_heatmap_pixels(self):
        """Test identity matrix heatmap bytes"""
        matrix = SimilarityMatrix(('a', 'b'), np.eye(2))
        path = export_report(matrix, self.root / 'matrix.pgm', format=EXPORT_PGM_HEATMAP, echo={'seed': 3})
        blob = path.read_bytes()
        self.assertTrue(blob.startswith(b'P5\n2 2\n255\n'))
        self.assertEqual(list(blob[-4:]), [255, 0, 0, 255])
        sidecar = sidecar_path(path).read_text()
        self.assertIn('normalization=min-max', sidecar)
        self.assertIn('min=0.0', sidecar)
        self.assertIn('max=1.0', sidecar)
        self.assertIn('# seed=3', sidecar)

    def test_heatmap_handles_constant_and_undefined(self):
        """Test constant matrices and NaN cells"""
        np.testing.assert_array_equal(heatmap_pixels(np.full((2, 2), 0.5)), np.full((2, 2), 255))
        pixels = heatmap_pixels(np.array([[0.0, float('nan')], [1.0, 0.5]]))
        self.assertEqual(pixels.tolist(), [[0, 0], [255, 128]])

    def test_psnr_curve_csv(self):
        """Test PSNR curve CSV"""
        curve = PsnrCurve(
            encoder_length=1,
            model_mean=np.array([30.0, 20.0]),
            model_std=np.array([1.0, 2.0]),
            baseline_mean=np.array([25.0, 18.0]),
            baseline_std=np.array([0.5, 0.5]),
            episodes=4
        )
        rows = read_csv(export_report(curve, self.root / 'psnr.csv'))
        self.assertEqual([row['kind'] for row in rows], ['reconstruction', 'prediction'])
        self.assertEqual(float(rows[1]['model_mean']), 20.0)

    def test_heatmap_needs_matrix(self):
        """Test heatmap of a non-matrix report"""
        report = RetrievalReport(folds=[FoldResult(0, 1.0, 1.0, 1, 1)])
        with self.assertRaises(ConfigurationError):
            export_report(report, self.root / 'x.pgm', format=EXPORT_PGM_HEATMAP)

    def test_unknown_format(self):
        """Test unknown export format"""
        with self.assertRaises(ConfigurationError):
            export_report(RetrievalReport(), self.root / 'x.bin', format='xlsx')
