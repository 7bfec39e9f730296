"""
Class-mean PCA of latent vectors.

The covariance of C class means in D dimensions has rank at most C - 1, so
the eigendecomposition runs on the C x C Gram matrix of the centred means
(cyclic Jacobi rotations) and eigenvectors are lifted back to D dimensions.
"""

import logging
from typing import Optional, Sequence, Tuple

import numpy as np

from memory.types import PcaTransform
from shared.exceptions import ConfigurationError, ContractViolation, InsufficientDataError, NumericalError

logger = logging.getLogger(__name__)

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100
# eigenvalues at or below max(ABSOLUTE, RELATIVE * largest) count as zero
EIGENVALUE_ABSOLUTE_FLOOR = 1e-12
EIGENVALUE_RELATIVE_FLOOR = 1e-10


def jacobi_eigh(
    matrix: np.ndarray,
    tolerance: float = JACOBI_TOLERANCE,
    max_sweeps: int = JACOBI_MAX_SWEEPS
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Args:
        matrix: Symmetric [n, n] matrix
        tolerance: Stop once the off-diagonal norm is below tolerance * max |entry|
        max_sweeps: Upper bound on full sweeps over all (p, q) pairs

    Returns:
        (eigenvalues [n] non-increasing, eigenvectors [n, n] as columns)

    Raises:
        ContractViolation: If the matrix is not square and symmetric
        NumericalError: If the rotations do not converge
    """
    a = np.array(matrix, dtype=np.float64, copy=True)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"jacobi_eigh: expected a square matrix, got shape {a.shape}")
    n = a.shape[0]
    scale = float(np.max(np.abs(a))) if a.size else 0.0
    if not np.allclose(a, a.T, rtol=0.0, atol=1e-12 * max(scale, 1.0)):
        raise ContractViolation("jacobi_eigh: matrix is not symmetric")
    v = np.eye(n)
    if scale == 0.0:
        return np.zeros(n), v

    for sweep in range(max_sweeps):
        off = np.sqrt(np.sum(np.square(a)) - np.sum(np.square(np.diag(a))))
        if off <= tolerance * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p], a[:, q] = c * col_p - s * col_q, s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :], a[q, :] = c * row_p - s * row_q, s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p], v[:, q] = c * vec_p - s * vec_q, s * vec_p + c * vec_q
                a[p, q] = a[q, p] = 0.0
    else:
        raise NumericalError(f"jacobi_eigh: no convergence after {max_sweeps} sweeps")

    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind='stable')
    return eigenvalues[order], v[:, order]


def _orient(rows: np.ndarray) -> np.ndarray:
    """Flip each row so that its largest-magnitude entry is positive."""
    if not rows.size:
        return rows
    pivots = np.argmax(np.abs(rows), axis=1)
    signs = np.sign(rows[np.arange(rows.shape[0]), pivots])
    signs[signs == 0] = 1.0
    return rows * signs[:, np.newaxis]


def fit_class_mean_pca(
    vectors: np.ndarray,
    labels: Sequence[Optional[str]],
    num_components: int
) -> PcaTransform:
    """
    Principal components of the covariance of per-class mean vectors.

    Vectors without a label are ignored. At most min(num_components, C - 1)
    components are kept, and only those with a non-negligible eigenvalue.

    Args:
        vectors: Latents [N, D]
        labels: Class label (or None) per vector
        num_components: Requested component count

    Returns:
        PcaTransform with orthonormal rows and non-increasing eigenvalues

    Raises:
        ConfigurationError: If num_components < 1
        ContractViolation: If vectors and labels disagree in length
        InsufficientDataError: If fewer than 2 distinct labels are present
    """
    if num_components < 1:
        raise ConfigurationError(f"num_components must be >= 1, got {num_components}")
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[0] != len(labels):
        raise ContractViolation(f"fit_class_mean_pca: {len(labels)} labels for vectors of shape {vectors.shape}")
    label_array = np.array([label if label is not None else '' for label in labels], dtype=object)
    has_label = np.array([label is not None for label in labels], dtype=bool)
    classes = sorted({label for label in labels if label is not None})
    if len(classes) < 2:
        raise InsufficientDataError(f"class-mean PCA needs at least 2 labelled classes, got {len(classes)}")

    means = np.stack([vectors[has_label & (label_array == name)].mean(axis=0) for name in classes])
    center = means.mean(axis=0)
    centered = means - center
    gram = centered @ centered.T / len(classes)
    eigenvalues, eigenvectors = jacobi_eigh(gram)

    floor = max(EIGENVALUE_ABSOLUTE_FLOOR, EIGENVALUE_RELATIVE_FLOOR * max(float(eigenvalues[0]), 0.0))
    available = int(np.sum(eigenvalues > floor))
    available = min(available, len(classes) - 1)
    keep = min(num_components, available)
    if available == 0:
        logger.warning(f"Class means of {len(classes)} classes coincide; PCA has no components")
    elif num_components > available:
        logger.warning(
            f"Requested {num_components} PCA components but class means of {len(classes)} classes "
            f"span only {available}; keeping {keep}"
        )

    dimension = vectors.shape[1]
    if keep == 0:
        return PcaTransform(center, np.zeros((0, dimension)), np.zeros(0))

    lifted = centered.T @ eigenvectors[:, :keep]
    lifted /= np.linalg.norm(lifted, axis=0, keepdims=True)
    # re-orthonormalize so rows stay orthonormal for small eigenvalues
    q, r = np.linalg.qr(lifted)
    q *= np.where(np.diag(r) < 0, -1.0, 1.0)
    components = _orient(q.T)
    logger.info(f"Fitted class-mean PCA: {len(classes)} classes, {keep} components, dimension {dimension}")
    return PcaTransform(center, components, eigenvalues[:keep].copy())


def apply_pca(transform: PcaTransform, vectors: np.ndarray) -> np.ndarray:
    """
    W (V - mean) for one vector [D] or a batch [N, D].

    Raises:
        ContractViolation: If the vector length differs from the transform's
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != transform.dimension:
        raise ContractViolation(
            f"apply_pca: vector length {vectors.shape[-1]} differs from transform dimension {transform.dimension}"
        )
    return (vectors - transform.mean) @ transform.components.T
