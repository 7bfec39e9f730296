"""
Records, metadata and the PCA transform of the episodic memory.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from shared.exceptions import ContractViolation, PersistenceError

METADATA_KEYS = ('label', 'source', 'frame_start', 'frame_stop', 'ordinal')


@dataclass(frozen=True)
class RecordMetadata:
    """
    Provenance of a stored latent vector.

    Attributes:
        label: Optional class name
        source: Identifier of the episode the vector came from
        frame_start: First frame index covered by the encoding
        frame_stop: One past the last frame index covered
    """
    label: Optional[str] = None
    source: str = ''
    frame_start: int = 0
    frame_stop: int = 0

    def __post_init__(self):
        for name in ('label', 'source'):
            value = getattr(self, name)
            if value is not None and ('\n' in value or '\r' in value):
                raise ContractViolation(f"metadata {name} must be a single line, got {value!r}")
        if self.frame_start < 0 or self.frame_stop < self.frame_start:
            raise ContractViolation(f"invalid frame range [{self.frame_start}, {self.frame_stop})")

    def encode(self, ordinal: int) -> str:
        """`key=value` lines; `label` is omitted when unset."""
        lines = []
        if self.label is not None:
            lines.append(f'label={self.label}')
        lines.append(f'source={self.source}')
        lines.append(f'frame_start={self.frame_start}')
        lines.append(f'frame_stop={self.frame_stop}')
        lines.append(f'ordinal={ordinal}')
        return '\n'.join(lines) + '\n'

    @classmethod
    def decode(cls, text: str) -> 'tuple[RecordMetadata, int]':
        """
        Parse an `encode()` block.

        Returns:
            (metadata, ordinal)

        Raises:
            PersistenceError: On unknown keys or malformed values
        """
        values: Dict[str, str] = {}
        for line in text.splitlines():
            if not line:
                continue
            key, sep, value = line.partition('=')
            if not sep or key not in METADATA_KEYS:
                raise PersistenceError(f"malformed metadata line {line!r}")
            values[key] = value
        try:
            metadata = cls(
                label=values.get('label'),
                source=values.get('source', ''),
                frame_start=int(values.get('frame_start', 0)),
                frame_stop=int(values.get('frame_stop', 0))
            )
            ordinal = int(values['ordinal'])
        except (KeyError, ValueError, ContractViolation) as e:
            raise PersistenceError(f"malformed metadata block ({str(e)})")
        return metadata, ordinal


@dataclass(frozen=True)
class MemoryRecord:
    """One stored episode: id, latent vector (float32), metadata and insertion ordinal."""
    id: int
    vector: np.ndarray = field(compare=False)
    metadata: RecordMetadata
    ordinal: int

    @property
    def label(self) -> Optional[str]:
        return self.metadata.label

    def same_as(self, other: 'MemoryRecord') -> bool:
        """Equal ids, metadata, ordinal and vector bytes."""
        return self == other and self.vector.tobytes() == other.vector.tobytes()


@dataclass(frozen=True)
class PcaTransform:
    """
    Projection x -> W (x - mean) with orthonormal rows in W.

    Attributes:
        mean: Centre of the class means [D]
        components: W [m, D], rows sorted by non-increasing eigenvalue
        eigenvalues: Variance of the class means along each row [m]
    """
    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        if self.components.ndim != 2 or self.components.shape[1] != self.mean.shape[0]:
            raise ContractViolation(
                f"PcaTransform: components {self.components.shape} do not fit mean {self.mean.shape}"
            )
        if self.eigenvalues.shape != (self.components.shape[0],):
            raise ContractViolation("PcaTransform: one eigenvalue per component expected")

    @property
    def dimension(self) -> int:
        return self.mean.shape[0]

    @property
    def num_components(self) -> int:
        return self.components.shape[0]

    @classmethod
    def identity(cls, dimension: int) -> 'PcaTransform':
        return cls(np.zeros(dimension), np.eye(dimension), np.ones(dimension))

    def same_as(self, other: 'PcaTransform') -> bool:
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in ((self.mean, other.mean), (self.components, other.components),
                         (self.eigenvalues, other.eigenvalues))
        )


@dataclass(frozen=True)
class QueryResult:
    """A retrieved record and its score (cosine, or negated Euclidean distance)."""
    record: MemoryRecord
    similarity: float
