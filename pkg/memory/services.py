"""
Episodic memory: stores latent vectors with provenance and retrieves the
closest past episodes for a query vector.
"""

import logging
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from memory.pca import apply_pca, fit_class_mean_pca
from memory.types import MemoryRecord, PcaTransform, QueryResult, RecordMetadata
from shared.constants import METRIC_CHOICES, METRIC_COSINE, METRIC_EUCLIDEAN
from shared.exceptions import ConfigurationError, ContractViolation, DegenerateInputError, NotFoundError
from shared.utils import ReadWriteLock

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12


def _as_vector(values, name: str) -> np.ndarray:
    vector = np.asarray(getattr(values, 'values', values), dtype=np.float64)
    if vector.ndim != 1:
        raise ContractViolation(f"{name} must be one-dimensional, got shape {vector.shape}")
    return vector


def cosine_similarity(a, b) -> float:
    """
    (a . b) / (|a| |b|), clipped to [-1, 1].

    Args:
        a: Vector (array or LatentVector)
        b: Vector of the same length

    Raises:
        ContractViolation: If lengths differ
        DegenerateInputError: If either norm is at most 1e-12
    """
    a = _as_vector(a, 'a')
    b = _as_vector(b, 'b')
    if a.shape != b.shape:
        raise ContractViolation(f"cosine_similarity: lengths {a.shape[0]} and {b.shape[0]} differ")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a <= NORM_FLOOR or norm_b <= NORM_FLOOR:
        raise DegenerateInputError("cosine_similarity: zero-norm vector")
    return float(np.clip(np.dot(a, b) / (norm_a * norm_b), -1.0, 1.0))


def similarity_scores(query: np.ndarray, stored: np.ndarray, metric: str = METRIC_COSINE) -> np.ndarray:
    """
    Score one query against every row of `stored`; higher is closer.

    Cosine scores are clipped to [-1, 1]; Euclidean scores are negated distances.

    Raises:
        ConfigurationError: On an unknown metric
        DegenerateInputError: If a cosine operand has zero norm
    """
    if metric == METRIC_EUCLIDEAN:
        return -np.linalg.norm(stored - query, axis=1)
    if metric != METRIC_COSINE:
        raise ConfigurationError(f"unknown metric '{metric}', expected one of {METRIC_CHOICES}")
    query_norm = float(np.linalg.norm(query))
    if query_norm <= NORM_FLOOR:
        raise DegenerateInputError("query vector has zero norm")
    norms = np.linalg.norm(stored, axis=1)
    degenerate = np.flatnonzero(norms <= NORM_FLOOR)
    if degenerate.size:
        raise DegenerateInputError(f"stored vectors at positions {degenerate.tolist()} have zero norm")
    return np.clip(stored @ query / (norms * query_norm), -1.0, 1.0)


class EpisodicMemory:
    """
    Ordered store of latent vectors of one fixed dimension.

    Reads (query, snapshot) may run concurrently; insert, fit_pca and restore
    take the lock exclusively, so a query never sees a half-inserted record.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ContractViolation(f"memory dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self._records: List[MemoryRecord] = []
        self._ids = {}
        self._pca: Optional[PcaTransform] = None
        self._next_id = 0
        self._cache: Optional[np.ndarray] = None
        self._lock = ReadWriteLock()

    def __len__(self) -> int:
        with self._lock.read():
            return len(self._records)

    def __iter__(self) -> Iterator[MemoryRecord]:
        return iter(self.records)

    @property
    def records(self) -> List[MemoryRecord]:
        """Records in insertion order (a copy)."""
        with self._lock.read():
            return list(self._records)

    @property
    def pca(self) -> Optional[PcaTransform]:
        with self._lock.read():
            return self._pca

    @property
    def next_id(self) -> int:
        with self._lock.read():
            return self._next_id

    def insert(self, vector, metadata: Optional[RecordMetadata] = None) -> int:
        """
        Append a vector with a fresh id.

        Args:
            vector: Latent of length `dimension` (stored as float32)
            metadata: Provenance; defaults to an empty block

        Returns:
            The new record id

        Raises:
            ContractViolation: If the vector has the wrong length or is not finite
        """
        values = _as_vector(vector, 'vector')
        if values.shape[0] != self.dimension:
            raise ContractViolation(
                f"vector length {values.shape[0]} differs from memory dimension {self.dimension}"
            )
        if not np.all(np.isfinite(values)):
            raise ContractViolation("vector contains non-finite values")
        stored = values.astype('<f4')
        stored.setflags(write=False)
        with self._lock.write():
            record = MemoryRecord(
                id=self._next_id,
                vector=stored,
                metadata=metadata or RecordMetadata(),
                ordinal=len(self._records)
            )
            self._records.append(record)
            self._ids[record.id] = record
            self._cache = None
            self._next_id += 1
        logger.debug(f"Inserted record {record.id} (label={record.label})")
        return record.id

    def insert_many(self, vectors, metadata: Sequence[RecordMetadata]) -> List[int]:
        """Insert rows of a [N, dimension] array with matching metadata."""
        vectors = np.asarray(vectors)
        if vectors.ndim != 2 or vectors.shape[0] != len(metadata):
            raise ContractViolation(f"{len(metadata)} metadata entries for vectors of shape {vectors.shape}")
        return [self.insert(row, meta) for row, meta in zip(vectors, metadata)]

    def get(self, record_id: int) -> MemoryRecord:
        """
        Raises:
            NotFoundError: If no record has this id
        """
        with self._lock.read():
            try:
                return self._ids[record_id]
            except KeyError:
                raise NotFoundError(f"Record {record_id} not found")

    def vectors(self) -> np.ndarray:
        """Stored vectors [N, dimension] as float64, in insertion order."""
        with self._lock.read():
            return self._matrix(self._records)

    def labels(self) -> List[Optional[str]]:
        return [record.label for record in self.records]

    def _matrix(self, records: Sequence[MemoryRecord]) -> np.ndarray:
        if not records:
            return np.zeros((0, self.dimension))
        return np.stack([record.vector for record in records]).astype(np.float64)

    def fit_pca(self, num_components: int) -> PcaTransform:
        """
        Fit class-mean PCA on the labelled records and install it.

        Raises:
            InsufficientDataError: If fewer than 2 labels are present
        """
        with self._lock.write():
            transform = fit_class_mean_pca(
                self._matrix(self._records), [record.label for record in self._records], num_components
            )
            self._pca = transform
        return transform

    def set_pca(self, transform: Optional[PcaTransform]) -> None:
        if transform is not None and transform.dimension != self.dimension:
            raise ContractViolation(
                f"PCA dimension {transform.dimension} differs from memory dimension {self.dimension}"
            )
        with self._lock.write():
            self._pca = transform

    def query(
        self,
        vector,
        top_n: int,
        use_pca: bool = False,
        metric: str = METRIC_COSINE
    ) -> List[QueryResult]:
        """
        Closest records to a query vector.

        Args:
            vector: Query latent of length `dimension`
            top_n: Number of results wanted (>= 1)
            use_pca: Compare in the fitted PCA space
            metric: 'cosine' or 'euclidean'

        Returns:
            min(top_n, size) results, best first; ties go to the earlier insertion

        Raises:
            ConfigurationError: If top_n < 1, the metric is unknown, or PCA is requested but not fitted
            ContractViolation: If the query length differs from `dimension`
            DegenerateInputError: If a cosine operand has zero norm
        """
        if top_n < 1:
            raise ConfigurationError(f"top_n must be >= 1, got {top_n}")
        if metric not in METRIC_CHOICES:
            raise ConfigurationError(f"unknown metric '{metric}', expected one of {METRIC_CHOICES}")
        query = _as_vector(vector, 'query')
        if query.shape[0] != self.dimension:
            raise ContractViolation(
                f"query length {query.shape[0]} differs from memory dimension {self.dimension}"
            )
        with self._lock.read():
            records = list(self._records)
            transform = self._pca
            stored = self._cache
            if stored is None:
                stored = self._cache = self._matrix(records)
        if use_pca and transform is None:
            raise ConfigurationError("PCA requested but no transform has been fitted")
        if not records:
            return []

        if use_pca:
            if transform.num_components == 0:
                raise DegenerateInputError("PCA transform has no components")
            query = apply_pca(transform, query)
            stored = apply_pca(transform, stored)
        scores = similarity_scores(query, stored, metric)
        ordinals = np.array([record.ordinal for record in records])
        order = np.lexsort((ordinals, -scores))[:top_n]
        return [QueryResult(records[i], float(scores[i])) for i in order]

    def snapshot(self) -> Tuple[List[MemoryRecord], Optional[PcaTransform], int]:
        """(records, pca, next_id) read under one lock."""
        with self._lock.read():
            return list(self._records), self._pca, self._next_id

    def restore(self, records: Sequence[MemoryRecord], pca: Optional[PcaTransform]) -> None:
        """
        Replace the contents with decoded records.

        Raises:
            ContractViolation: On duplicate ids or wrong vector lengths
        """
        ids = {}
        for record in records:
            if record.vector.shape != (self.dimension,):
                raise ContractViolation(f"record {record.id} has shape {record.vector.shape}")
            if record.id in ids:
                raise ContractViolation(f"duplicate record id {record.id}")
            ids[record.id] = record
        if pca is not None and pca.dimension != self.dimension:
            raise ContractViolation(f"PCA dimension {pca.dimension} differs from memory dimension {self.dimension}")
        ordered = sorted(records, key=lambda record: record.ordinal)
        with self._lock.write():
            self._records = ordered
            self._ids = ids
            self._pca = pca
            self._next_id = max(ids) + 1 if ids else 0
            self._cache = None
