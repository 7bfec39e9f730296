"""
Result types of the evaluation protocols.
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from shared.exceptions import ContractViolation


@dataclass(frozen=True)
class SimilarityMatrix:
    """
    Mean pairwise cosine similarity between classes.

    Entry (a, b) averages all cross pairs of classes a and b; the diagonal
    averages distinct intra-class pairs and is NaN for single-member classes.
    """
    labels: Tuple[str, ...]
    values: np.ndarray
    counts: Tuple[int, ...] = ()

    def __post_init__(self):
        size = len(self.labels)
        if self.values.shape != (size, size):
            raise ContractViolation(f"SimilarityMatrix: {size} labels for values of shape {self.values.shape}")

    @property
    def defined(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def diagonal_mean(self) -> float:
        """Mean of the defined diagonal entries."""
        diagonal = np.diag(self.values)
        return float(np.mean(diagonal[~np.isnan(diagonal)])) if np.any(~np.isnan(diagonal)) else float('nan')

    def off_diagonal_mean(self) -> float:
        size = len(self.labels)
        if size < 2:
            return float('nan')
        mask = ~np.eye(size, dtype=bool)
        return float(np.mean(self.values[mask]))


@dataclass(frozen=True)
class RankedQuery:
    """
    Labels retrieved for one query, best first.

    Attributes:
        label: The query's class
        retrieved: Labels of the retrieved records in rank order
        relevant_in_memory: Records of the query's class present in the memory
    """
    label: Optional[str]
    retrieved: Tuple[Optional[str], ...]
    relevant_in_memory: int


@dataclass(frozen=True)
class FoldResult:
    """Scores of one fold of the retrieval benchmark."""
    fold: int
    precision: float
    mean_ap: float
    queries: int
    memory_size: int
    excluded: int = 0


@dataclass
class RetrievalReport:
    """
    Retrieval benchmark scores per fold with their mean and standard deviation.

    Attributes:
        folds: Per-fold results in fold order
        echo: Benchmark settings (folds, memory_fraction, top_n, use_pca, metric, seed, pca_components)
    """
    folds: List[FoldResult] = field(default_factory=list)
    echo: Dict[str, Any] = field(default_factory=dict)

    def _values(self, name: str) -> np.ndarray:
        return np.array([getattr(result, name) for result in self.folds], dtype=np.float64)

    @property
    def precision_mean(self) -> float:
        return float(self._values('precision').mean()) if self.folds else float('nan')

    @property
    def precision_std(self) -> float:
        return float(self._values('precision').std()) if self.folds else float('nan')

    @property
    def map_mean(self) -> float:
        return float(self._values('mean_ap').mean()) if self.folds else float('nan')

    @property
    def map_std(self) -> float:
        return float(self._values('mean_ap').std()) if self.folds else float('nan')

    @property
    def use_pca(self) -> bool:
        return bool(self.echo.get('use_pca', False))

    @property
    def metric(self) -> str:
        return str(self.echo.get('metric', ''))


@dataclass(frozen=True)
class PsnrCurve:
    """
    Per-position PSNR statistics over a validation set.

    Positions 1..k are reconstructions, k+1..n predictions. The baseline is
    the mean of the k input frames used as the output at every position.
    """
    encoder_length: int
    model_mean: np.ndarray
    model_std: np.ndarray
    baseline_mean: np.ndarray
    baseline_std: np.ndarray
    episodes: int = 0

    def __post_init__(self):
        n = self.model_mean.shape[0]
        for name in ('model_std', 'baseline_mean', 'baseline_std'):
            if getattr(self, name).shape != (n,):
                raise ContractViolation(f"PsnrCurve: {name} must have {n} positions")
        if not 1 <= self.encoder_length < n:
            raise ContractViolation(f"PsnrCurve: encoder length {self.encoder_length} outside 1..{n - 1}")

    @property
    def positions(self) -> int:
        return self.model_mean.shape[0]

    def kinds(self) -> Sequence[str]:
        """'reconstruction' or 'prediction' per position."""
        return ['reconstruction' if i < self.encoder_length else 'prediction' for i in range(self.positions)]

    def reconstruction_mean(self) -> float:
        return float(self.model_mean[:self.encoder_length].mean())

    def prediction_mean(self) -> float:
        return float(self.model_mean[self.encoder_length:].mean())
