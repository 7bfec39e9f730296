"""
Latent tables written by `encode` and read by the memory and evaluation
commands.

Schema (after the `# key=value` echo lines):

    episode_id,label,split,frame_start,frame_stop,v0,...,v{D-1}
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from network.repository import read_csv, render_csv
from shared.exceptions import PersistenceError
from shared.utils import PathLike, atomic_write_text

logger = logging.getLogger(__name__)

KEY_COLUMNS = ['episode_id', 'label', 'split', 'frame_start', 'frame_stop']


@dataclass
class LatentTable:
    """Latents [N, D] with the provenance of each row."""
    episode_ids: List[int]
    labels: List[str]
    splits: List[str]
    frame_start: List[int]
    frame_stop: List[int]
    vectors: np.ndarray

    def __len__(self) -> int:
        return len(self.episode_ids)

    @property
    def dimension(self) -> int:
        return self.vectors.shape[1]

    def source(self, row: int) -> str:
        return f"{self.splits[row]}/{self.episode_ids[row]}"


def write_latents(path: PathLike, table: LatentTable, echo: Optional[Dict[str, Any]] = None) -> Path:
    columns = KEY_COLUMNS + [f'v{i}' for i in range(table.dimension)]
    rows = []
    for row in range(len(table)):
        values: Dict[str, Any] = {
            'episode_id': table.episode_ids[row],
            'label': table.labels[row],
            'split': table.splits[row],
            'frame_start': table.frame_start[row],
            'frame_stop': table.frame_stop[row],
        }
        values.update({f'v{i}': float(value) for i, value in enumerate(table.vectors[row])})
        rows.append(values)
    return atomic_write_text(path, render_csv(columns, rows, echo or {}))


def read_latents(path: PathLike) -> LatentTable:
    """
    Raises:
        PersistenceError: If the file cannot be read or has no latent columns
    """
    try:
        rows = read_csv(path)
    except OSError as e:
        raise PersistenceError(f"Failed to read latents '{path}': {str(e)}")
    if not rows:
        raise PersistenceError(f"Latent table '{path}' has no rows")
    dimension = sum(1 for column in rows[0] if column.startswith('v') and column[1:].isdigit())
    if not dimension:
        raise PersistenceError(f"Latent table '{path}' has no latent columns")
    try:
        table = LatentTable(
            episode_ids=[int(row['episode_id']) for row in rows],
            labels=[row['label'] for row in rows],
            splits=[row['split'] for row in rows],
            frame_start=[int(row['frame_start']) for row in rows],
            frame_stop=[int(row['frame_stop']) for row in rows],
            vectors=np.array([[float(row[f'v{i}']) for i in range(dimension)] for row in rows])
        )
    except (KeyError, ValueError, TypeError) as e:
        raise PersistenceError(f"Malformed latent table '{path}': {str(e)}")
    logger.debug(f"Read {len(table)} latents of dimension {dimension} from {path}")
    return table

