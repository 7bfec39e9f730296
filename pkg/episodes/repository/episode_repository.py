import logging
from pathlib import Path

from network.types import EpisodeTensor
from shared.constants import EPISODE_MAGIC, EPISODE_VERSION
from shared.exceptions import ContractViolation, NotFoundError, PersistenceError
from shared.utils import PathLike, atomic_write_bytes, read_bytes
from shared.utils.binary import BinaryReader, BinaryWriter

logger = logging.getLogger(__name__)


class EpisodeRepository:
    """
    Repository class for episode files.

    Layout: magic, u32 version, u64 episode id, u32 label length, label,
    u32 n, C, H, W, then n*C*H*W little-endian float32 pixels in frame-major
    order; a CRC32 closes the file.
    """

    def encode(self, episode: EpisodeTensor) -> bytes:
        if episode.episode_id is None:
            raise ContractViolation("episode files need an episode id")
        writer = BinaryWriter().raw(EPISODE_MAGIC).u32(EPISODE_VERSION)
        writer.u64(episode.episode_id).text(episode.label or '')
        for extent in episode.frames.shape:
            writer.u32(extent)
        writer.array(episode.frames, '<f4')
        return writer.with_checksum()

    def decode(self, blob: bytes, source: str) -> EpisodeTensor:
        """
        Raises:
            PersistenceError: On bad magic, version, checksum, truncation or pixel range
        """
        reader = BinaryReader.verified(blob, source)
        reader.expect_magic(EPISODE_MAGIC)
        reader.expect_version(EPISODE_VERSION)
        episode_id = reader.u64()
        label = reader.text() or None
        shape = tuple(reader.u32() for _ in range(4))
        frames = reader.array(shape, '<f4')
        reader.expect_end()
        try:
            return EpisodeTensor(frames, label=label, episode_id=episode_id)
        except ContractViolation as e:
            raise PersistenceError(f"{source}: {str(e)}")

    def save(self, episode: EpisodeTensor, path: PathLike) -> Path:
        target = atomic_write_bytes(path, self.encode(episode))
        logger.debug(f"Saved episode {episode.episode_id} ({episode.label}) to {target}")
        return target

    def load(self, path: PathLike) -> EpisodeTensor:
        """
        Raises:
            NotFoundError: If the file does not exist
            PersistenceError: If the file is unreadable or malformed
        """
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"Episode file '{path}' not found")
        return self.decode(read_bytes(path), str(path))
