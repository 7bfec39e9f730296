"""
Tests for the Jacobi eigensolver and class-mean PCA.
"""

import numpy as np
from django.test import SimpleTestCase

from memory.pca import apply_pca, fit_class_mean_pca, jacobi_eigh
from memory.services import EpisodicMemory
from memory.types import PcaTransform, RecordMetadata
from shared.exceptions import ConfigurationError, ContractViolation, InsufficientDataError


def clustered(rng, num_classes: int, per_class: int, dimension: int, spread: float = 0.3):
    centres = rng.normal(scale=2.0, size=(num_classes, dimension))
    vectors, labels = [], []
    for index, centre in enumerate(centres):
        vectors.append(centre + spread * rng.normal(size=(per_class, dimension)))
        labels.extend([f'class-{index}'] * per_class)
    return np.concatenate(vectors), labels


def class_mean_covariance(vectors, labels):
    classes = sorted(set(labels))
    labels = np.array(labels)
    means = np.stack([vectors[labels == name].mean(axis=0) for name in classes])
    centered = means - means.mean(axis=0)
    return centered.T @ centered / len(classes)


class JacobiEighTest(SimpleTestCase):
    """Test cases for jacobi_eigh"""

    def test_matches_reference_decomposition(self):
        """Test eigenpairs rebuild the input matrix"""
        rng = np.random.default_rng(1)
        a = rng.normal(size=(7, 7))
        matrix = a + a.T
        eigenvalues, eigenvectors = jacobi_eigh(matrix)
        np.testing.assert_allclose(eigenvalues, np.sort(np.linalg.eigvalsh(matrix))[::-1], atol=1e-10)
        np.testing.assert_allclose(matrix @ eigenvectors, eigenvectors * eigenvalues, atol=1e-10)
        np.testing.assert_allclose(eigenvectors.T @ eigenvectors, np.eye(7), atol=1e-12)

    def test_eigenvalues_non_increasing(self):
        """Test eigenvalues come in non-increasing order"""
        matrix = np.diag([1.0, 5.0, 3.0])
        eigenvalues, eigenvectors = jacobi_eigh(matrix)
        np.testing.assert_array_equal(eigenvalues, [5.0, 3.0, 1.0])
        np.testing.assert_array_equal(np.abs(eigenvectors[:, 0]), [0.0, 1.0, 0.0])

    def test_zero_matrix(self):
        """Test zero matrix"""
        eigenvalues, eigenvectors = jacobi_eigh(np.zeros((3, 3)))
        np.testing.assert_array_equal(eigenvalues, np.zeros(3))
        np.testing.assert_array_equal(eigenvectors, np.eye(3))

    def test_asymmetric_rejected(self):
        """Test asymmetric input"""
        with self.assertRaises(ContractViolation):
            jacobi_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))

    def test_non_square_rejected(self):
        """Test non-square input"""
        with self.assertRaises(ContractViolation):
            jacobi_eigh(np.zeros((2, 3)))


class FitClassMeanPcaTest(SimpleTestCase):
    """Test cases for fit_class_mean_pca"""

    def setUp(self):
        self.rng = np.random.default_rng(7)

    def test_two_classes_by_hand(self):
        """Class means (0,0) and (2,0) give one component (1,0) and mean (1,0)"""
        vectors = np.array([[0.0, 1.0], [0.0, -1.0], [2.0, 0.5], [2.0, -0.5]])
        transform = fit_class_mean_pca(vectors, ['a', 'a', 'b', 'b'], num_components=2)
        self.assertEqual(transform.num_components, 1)
        np.testing.assert_allclose(transform.mean, [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(transform.components[0], [1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(transform.eigenvalues, [1.0], atol=1e-12)

    def test_equal_means_give_no_components(self):
        """Test identical class means give zero components"""
        vectors = np.array([[1.0, 2.0], [3.0, 4.0], [3.0, 4.0], [1.0, 2.0]])
        with self.assertLogs('memory.pca', level='WARNING'):
            transform = fit_class_mean_pca(vectors, ['a', 'a', 'b', 'b'], num_components=3)
        self.assertEqual(transform.num_components, 0)
        self.assertEqual(transform.components.shape, (0, 2))

    def test_rank_bound(self):
        """Test requesting 200 components for 8 classes keeps exactly 7"""
        vectors, labels = clustered(self.rng, num_classes=8, per_class=5, dimension=20)
        with self.assertLogs('memory.pca', level='WARNING') as logs:
            transform = fit_class_mean_pca(vectors, labels, num_components=200)
        self.assertEqual(transform.num_components, 8 - 1)
        self.assertEqual(transform.components.shape, (7, 20))
        self.assertIn('200', logs.output[0])

    def test_orthonormal_rows_and_sorted_eigenvalues(self):
        """Test orthonormal components and sorted eigenvalues"""
        vectors, labels = clustered(self.rng, num_classes=10, per_class=4, dimension=30)
        transform = fit_class_mean_pca(vectors, labels, num_components=6)
        m = transform.num_components
        self.assertEqual(m, 6)
        np.testing.assert_allclose(transform.components @ transform.components.T, np.eye(m), atol=1e-8)
        self.assertTrue(np.all(np.diff(transform.eigenvalues) <= 0))

    def test_covariance_reconstructed_from_eigenpairs(self):
        """Sum of eigenvalue-weighted outer products recovers the class-mean covariance"""
        vectors, labels = clustered(self.rng, num_classes=8, per_class=6, dimension=16)
        transform = fit_class_mean_pca(vectors, labels, num_components=50)
        self.assertEqual(transform.num_components, 7)
        covariance = class_mean_covariance(vectors, labels)
        reconstructed = transform.components.T @ np.diag(transform.eigenvalues) @ transform.components
        np.testing.assert_allclose(reconstructed, covariance, atol=1e-8)

    def test_unlabelled_vectors_ignored(self):
        """Test vectors without a label do not move the class means"""
        vectors = np.array([[0.0, 0.0], [2.0, 0.0], [100.0, 100.0]])
        transform = fit_class_mean_pca(vectors, ['a', 'b', None], num_components=1)
        np.testing.assert_allclose(transform.mean, [1.0, 0.0], atol=1e-12)

    def test_single_class_is_insufficient(self):
        """Test one class is not enough"""
        with self.assertRaises(InsufficientDataError):
            fit_class_mean_pca(np.ones((3, 2)), ['a', 'a', None], num_components=1)

    def test_invalid_component_count(self):
        """Test component count below 1"""
        with self.assertRaises(ConfigurationError):
            fit_class_mean_pca(np.ones((2, 2)), ['a', 'b'], num_components=0)

    def test_deterministic(self):
        """Test repeated fits"""
        vectors, labels = clustered(self.rng, num_classes=5, per_class=3, dimension=8)
        first = fit_class_mean_pca(vectors, labels, num_components=4)
        second = fit_class_mean_pca(vectors, labels, num_components=4)
        self.assertTrue(first.same_as(second))


class ApplyPcaTest(SimpleTestCase):
    """Test cases for apply_pca"""

    def setUp(self):
        rng = np.random.default_rng(9)
        self.rng = rng
        vectors, labels = clustered(rng, num_classes=6, per_class=4, dimension=12)
        self.transform = fit_class_mean_pca(vectors, labels, num_components=5)

    def test_mean_maps_to_zero(self):
        """Test the fitted mean projects to the origin"""
        np.testing.assert_allclose(apply_pca(self.transform, self.transform.mean), np.zeros(5), atol=1e-12)

    def test_projection_is_a_contraction(self):
        """Test projection never lengthens distances"""
        for _ in range(20):
            a, b = self.rng.normal(size=(2, 12))
            projected = np.linalg.norm(apply_pca(self.transform, a) - apply_pca(self.transform, b))
            self.assertLessEqual(projected, np.linalg.norm(a - b) + 1e-8)

    def test_identity_transform(self):
        """Test identity transform"""
        v = self.rng.normal(size=4)
        np.testing.assert_allclose(apply_pca(PcaTransform.identity(4), v), v)

    def test_batch_matches_rows(self):
        """Test batched projection matches row-wise projection"""
        batch = self.rng.normal(size=(3, 12))
        rows = np.stack([apply_pca(self.transform, row) for row in batch])
        np.testing.assert_allclose(apply_pca(self.transform, batch), rows, atol=1e-12)

    def test_length_mismatch(self):
        """Test vector length mismatch"""
        with self.assertRaises(ContractViolation):
            apply_pca(self.transform, np.zeros(11))


class MemoryPcaTest(SimpleTestCase):
    """EpisodicMemory.fit_pca over stored records"""

    def test_fit_and_query_in_pca_space(self):
        """Test fitting PCA on a memory and querying in its space"""
        memory = EpisodicMemory(dimension=2)
        for vector, label in (([0.0, 1.0], 'a'), ([0.0, -1.0], 'a'), ([2.0, 0.5], 'b'), ([2.0, -0.5], 'b')):
            memory.insert(vector, RecordMetadata(label=label))
        transform = memory.fit_pca(num_components=1)
        self.assertIs(memory.pca, transform)
        # projected onto (1,0) around x=1: class a -> -1, class b -> +1
        results = memory.query([1.5, 9.0], top_n=4, use_pca=True)
        self.assertEqual({r.record.label for r in results[:2]}, {'b'})
        self.assertAlmostEqual(results[0].similarity, 1.0, places=6)
