import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from episodes.types import DatasetConfig, DatasetManifest, ManifestEntry
from shared.constants import MANIFEST_VERSION, SPLIT_CHOICES, SPLIT_TRAIN, SPLIT_VALIDATION
from shared.exceptions import ConfigurationError, NotFoundError, PersistenceError
from shared.utils import PathLike, atomic_write_text, echo_lines, read_bytes

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.txt'
MANIFEST_TITLE = '# episodic memory dataset manifest'
ENTRY_COLUMNS = ['episode_id', 'split', 'label', 'seed', 'path']

_INT_SETTINGS = ('frame_size', 'channels', 'sequence_length', 'source_frames', 'train_per_class',
                 'validation_per_class')


class ManifestRepository:
    """
    Repository class for dataset manifests.

    The manifest is text: a title line, `# key=value` echo lines, `key=value`
    header lines (format_version, master_seed, dataset settings, per-split
    counts), then a CSV table with one row per episode.
    """

    def render(self, manifest: DatasetManifest, echo: Optional[Dict[str, Any]] = None) -> str:
        output = io.StringIO()
        lines = [MANIFEST_TITLE]
        lines.extend(echo_lines(echo or {}, prefix='# '))
        lines.append(f'format_version={manifest.version}')
        lines.append(f'master_seed={manifest.master_seed}')
        lines.extend(echo_lines(manifest.config.as_dict()))
        for split in SPLIT_CHOICES:
            lines.append(f'{split}_count={len(manifest.split(split))}')
        output.write('\n'.join(lines) + '\n')

        writer = csv.writer(output, lineterminator='\n')
        writer.writerow(ENTRY_COLUMNS)
        for entry in manifest.entries:
            writer.writerow([entry.episode_id, entry.split, entry.label, entry.seed, entry.path])
        return output.getvalue()

    def parse(self, text: str, source: str) -> DatasetManifest:
        """
        Raises:
            PersistenceError: On a missing table, bad version, malformed rows or count mismatch
        """
        lines = text.splitlines()
        header: Dict[str, str] = {}
        table_start = None
        for index, line in enumerate(lines):
            if not line or line.startswith('#'):
                continue
            if line == ','.join(ENTRY_COLUMNS):
                table_start = index
                break
            key, sep, value = line.partition('=')
            if not sep:
                raise PersistenceError(f"{source}: malformed header line {line!r}")
            header[key] = value
        if table_start is None:
            raise PersistenceError(f"{source}: missing episode table")

        try:
            version = int(header.pop('format_version'))
            master_seed = int(header.pop('master_seed'))
            counts = {split: int(header.pop(f'{split}_count')) for split in SPLIT_CHOICES}
            settings = {key: int(value) if key in _INT_SETTINGS else value for key, value in header.items()}
            config = DatasetConfig.from_dict(settings).validate()
        except (KeyError, ValueError, ConfigurationError) as e:
            raise PersistenceError(f"{source}: invalid manifest header ({str(e)})")
        if version != MANIFEST_VERSION:
            raise PersistenceError(f"{source}: unsupported format version {version} (expected {MANIFEST_VERSION})")

        entries = []
        for row in csv.DictReader(io.StringIO('\n'.join(lines[table_start:]))):
            try:
                entries.append(ManifestEntry(
                    episode_id=int(row['episode_id']),
                    split=row['split'],
                    label=row['label'],
                    seed=int(row['seed']),
                    path=row['path']
                ))
            except (KeyError, TypeError, ValueError) as e:
                raise PersistenceError(f"{source}: malformed episode row {row} ({str(e)})")
        manifest = DatasetManifest(config=config, master_seed=master_seed, entries=entries, version=version)
        for split, expected in counts.items():
            found = len(manifest.split(split))
            if found != expected:
                raise PersistenceError(f"{source}: {split}_count={expected} but {found} rows")
        return manifest

    def save(self, manifest: DatasetManifest, root: PathLike, echo: Optional[Dict[str, Any]] = None) -> Path:
        target = atomic_write_text(Path(root) / MANIFEST_NAME, self.render(manifest, echo))
        logger.info(
            f"Wrote manifest {target}: {len(manifest.split(SPLIT_TRAIN))} train, "
            f"{len(manifest.split(SPLIT_VALIDATION))} validation episodes"
        )
        return target

    def load(self, path: PathLike) -> DatasetManifest:
        """
        Read a manifest from its file or from the dataset directory.

        Raises:
            NotFoundError: If there is no manifest
            PersistenceError: If it is unreadable or malformed
        """
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise NotFoundError(f"Manifest '{path}' not found")
        try:
            text = read_bytes(path).decode('utf-8')
        except UnicodeDecodeError as e:
            raise PersistenceError(f"{path}: not UTF-8 ({str(e)})")
        return self.parse(text, str(path))
