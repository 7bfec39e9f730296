import logging
from pathlib import Path

import numpy as np

from memory.services import EpisodicMemory
from memory.types import MemoryRecord, PcaTransform, RecordMetadata
from shared.constants import MEMORY_MAGIC, MEMORY_VERSION
from shared.exceptions import ContractViolation, NotFoundError, PersistenceError
from shared.utils import PathLike, atomic_write_bytes, read_bytes
from shared.utils.binary import BinaryReader, BinaryWriter

logger = logging.getLogger(__name__)


class MemoryRepository:
    """
    Repository class for `.epmem` memory files.

    Layout: magic, u32 version, u32 dimension, u64 record count, then per
    record u64 id, u32 metadata length, metadata text (`key=value` lines:
    label, source, frame_start, frame_stop, ordinal), little-endian float32
    vector; then a u8 PCA flag followed, when set, by u32 component count and
    float64 mean, eigenvalues and row-major components; a CRC32 closes the file.
    """

    def encode(self, memory: EpisodicMemory) -> bytes:
        records, pca, _ = memory.snapshot()
        writer = BinaryWriter().raw(MEMORY_MAGIC).u32(MEMORY_VERSION)
        writer.u32(memory.dimension).u64(len(records))
        for record in records:
            writer.u64(record.id)
            writer.text(record.metadata.encode(record.ordinal))
            writer.array(record.vector, '<f4')
        if pca is None:
            writer.u8(0)
        else:
            writer.u8(1).u32(pca.num_components)
            writer.array(pca.mean, '<f8')
            writer.array(pca.eigenvalues, '<f8')
            writer.array(pca.components, '<f8')
        return writer.with_checksum()

    def decode(self, blob: bytes, source: str) -> EpisodicMemory:
        """
        Parse memory bytes into a new memory.

        Raises:
            PersistenceError: On bad magic, version, checksum, truncation or records
        """
        reader = BinaryReader.verified(blob, source)
        reader.expect_magic(MEMORY_MAGIC)
        reader.expect_version(MEMORY_VERSION)
        dimension = reader.u32()
        count = reader.u64()
        records = []
        for _ in range(count):
            record_id = reader.u64()
            metadata, ordinal = RecordMetadata.decode(reader.text())
            vector = reader.array((dimension,), '<f4')
            vector.setflags(write=False)
            records.append(MemoryRecord(id=record_id, vector=vector, metadata=metadata, ordinal=ordinal))
        pca = None
        flag = reader.u8()
        if flag not in (0, 1):
            raise PersistenceError(f"{source}: invalid PCA flag {flag}")
        if flag:
            m = reader.u32()
            mean = reader.array((dimension,), '<f8')
            eigenvalues = reader.array((m,), '<f8')
            components = reader.array((m, dimension), '<f8')
            pca = PcaTransform(mean, components, eigenvalues)
        reader.expect_end()

        try:
            memory = EpisodicMemory(dimension)
            memory.restore(records, pca)
        except ContractViolation as e:
            raise PersistenceError(f"{source}: {str(e)}")
        return memory

    def save(self, memory: EpisodicMemory, path: PathLike) -> Path:
        """Write a memory atomically."""
        target = atomic_write_bytes(path, self.encode(memory))
        logger.info(f"Saved memory {target} ({len(memory)} records, dimension {memory.dimension})")
        return target

    def load(self, path: PathLike) -> EpisodicMemory:
        """
        Read a memory file.

        Raises:
            NotFoundError: If the file does not exist
            PersistenceError: If the file is unreadable or malformed
        """
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"Memory '{path}' not found")
        memory = self.decode(read_bytes(path), str(path))
        logger.info(f"Loaded memory {path} ({len(memory)} records)")
        return memory

    def load_or_create(self, path: PathLike, dimension: int) -> EpisodicMemory:
        """Existing memory at `path`, or an empty one of `dimension`."""
        path = Path(path)
        if not path.exists():
            return EpisodicMemory(dimension)
        memory = self.load(path)
        if memory.dimension != dimension:
            raise ContractViolation(
                f"memory '{path}' has dimension {memory.dimension}, latent has {dimension}"
            )
        return memory


def memories_equal(a: EpisodicMemory, b: EpisodicMemory) -> bool:
    """Same dimension, records (bytes, metadata, order) and PCA transform."""
    records_a, pca_a, _ = a.snapshot()
    records_b, pca_b, _ = b.snapshot()
    if a.dimension != b.dimension or len(records_a) != len(records_b):
        return False
    if not all(x.same_as(y) for x, y in zip(records_a, records_b)):
        return False
    if (pca_a is None) != (pca_b is None):
        return False
    return pca_a is None or pca_a.same_as(pca_b)
