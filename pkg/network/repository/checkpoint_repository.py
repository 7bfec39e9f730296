import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
from django.core.serializers.json import DjangoJSONEncoder

from network.config import ModelConfig
from shared.constants import CHECKPOINT_MAGIC, CHECKPOINT_SUFFIX, CHECKPOINT_VERSION
from shared.exceptions import NotFoundError, PersistenceError
from shared.utils import PathLike, atomic_write_bytes, read_bytes
from shared.utils.binary import BinaryReader, BinaryWriter
from substrate.params import ParamSet

logger = logging.getLogger(__name__)

CHECKPOINT_PATTERN = re.compile(r'^checkpoint-epoch-(\d+)' + re.escape(CHECKPOINT_SUFFIX) + r'$')


@dataclass
class Checkpoint:
    """A decoded checkpoint: model config, parameter arrays and the run echo."""
    config: ModelConfig
    tensors: Dict[str, np.ndarray]
    echo: Dict[str, Any] = field(default_factory=dict)

    def to_params(self) -> ParamSet:
        """Parameters cast to the config's dtype."""
        return ParamSet.from_arrays({
            name: value.astype(self.config.numpy_dtype) for name, value in self.tensors.items()
        })


class CheckpointRepository:
    """
    Repository class for checkpoint files.

    Layout: magic, u32 version, config echo (u32 length + UTF-8 JSON), u32
    tensor count, then per tensor u32 name length, name, u32 rank, u32
    extents, little-endian float32 values; a CRC32 of all preceding bytes
    closes the file. Files are written atomically and never modified.
    """

    def encode(self, params: ParamSet, config: ModelConfig, echo: Dict[str, Any]) -> bytes:
        header = json.dumps({'model': config.as_dict(), 'run': echo}, cls=DjangoJSONEncoder, sort_keys=True)
        writer = BinaryWriter().raw(CHECKPOINT_MAGIC).u32(CHECKPOINT_VERSION).text(header)
        writer.u32(len(params))
        for name, tensor in params.items():
            writer.text(name)
            writer.u32(tensor.ndim)
            for extent in tensor.shape:
                writer.u32(extent)
            writer.array(tensor.data, '<f4')
        return writer.with_checksum()

    def decode(self, blob: bytes, source: str) -> Checkpoint:
        """
        Parse checkpoint bytes.

        Raises:
            PersistenceError: On bad magic, version, checksum, truncation or config
        """
        reader = BinaryReader.verified(blob, source)
        reader.expect_magic(CHECKPOINT_MAGIC)
        reader.expect_version(CHECKPOINT_VERSION)
        try:
            header = json.loads(reader.text())
            config = ModelConfig.from_dict(header['model'])
        except (ValueError, KeyError, TypeError) as e:
            raise PersistenceError(f"{source}: invalid config echo ({str(e)})")
        tensors = {}
        for _ in range(reader.u32()):
            name = reader.text()
            rank = reader.u32()
            shape = tuple(reader.u32() for _ in range(rank))
            tensors[name] = reader.array(shape, '<f4')
        reader.expect_end()
        return Checkpoint(config=config, tensors=tensors, echo=header.get('run', {}))

    def save(self, path: PathLike, params: ParamSet, config: ModelConfig, echo: Dict[str, Any]) -> Path:
        """
        Write a checkpoint atomically.

        Args:
            path: Destination file
            params: Parameters to store (saved as float32)
            config: Model config echoed into the header
            echo: Run metadata (epoch, step, seed, resolved run config)

        Returns:
            The written path
        """
        target = atomic_write_bytes(path, self.encode(params, config, echo))
        logger.info(f"Saved checkpoint {target} ({params.num_values()} values)")
        return target

    def load(self, path: PathLike) -> Checkpoint:
        """
        Read a checkpoint.

        Raises:
            NotFoundError: If the file does not exist
            PersistenceError: If the file is unreadable or malformed
        """
        path = Path(path)
        if not path.exists():
            raise NotFoundError(f"Checkpoint '{path}' not found")
        return self.decode(read_bytes(path), str(path))

    def path_for(self, directory: PathLike, epoch: int) -> Path:
        return Path(directory) / f'checkpoint-epoch-{epoch:04d}{CHECKPOINT_SUFFIX}'

    def list_checkpoints(self, directory: PathLike) -> List[Path]:
        """Versioned checkpoints in a directory, oldest epoch first."""
        directory = Path(directory)
        if not directory.is_dir():
            return []
        found = []
        for entry in directory.iterdir():
            match = CHECKPOINT_PATTERN.match(entry.name)
            if match:
                found.append((int(match.group(1)), entry))
        return [entry for _, entry in sorted(found)]

    def latest(self, directory: PathLike) -> Path:
        """
        Newest versioned checkpoint in a directory.

        Raises:
            NotFoundError: If the directory holds none
        """
        checkpoints = self.list_checkpoints(directory)
        if not checkpoints:
            raise NotFoundError(f"No checkpoints in '{directory}'")
        return checkpoints[-1]

    def resolve(self, path: PathLike) -> Path:
        """A checkpoint file, or the latest checkpoint when given a directory."""
        path = Path(path)
        return self.latest(path) if path.is_dir() else path
