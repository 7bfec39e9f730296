"""
Dataset configuration and manifest types for the synthetic corpus.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Tuple

from episodes.catalog import CLASS_NAMES, get_class
from shared.constants import MANIFEST_VERSION, SPLIT_CHOICES, SPLIT_TRAIN, SPLIT_VALIDATION
from shared.exceptions import ConfigurationError, NotFoundError


@dataclass(frozen=True)
class DatasetConfig:
    """
    Shape and size of a generated corpus.

    Attributes:
        frame_size: Square frame extent H = W
        channels: 1 (grey) or 3 (RGB)
        sequence_length: Frames n kept per episode
        source_frames: Frames rendered per clip before equally spaced sampling
        train_per_class: Training episodes per class
        validation_per_class: Validation episodes per class
        classes: Catalog class names, in label order
    """
    frame_size: int = 32
    channels: int = 3
    sequence_length: int = 10
    source_frames: int = 20
    train_per_class: int = 50
    validation_per_class: int = 10
    classes: Tuple[str, ...] = CLASS_NAMES

    def validate(self) -> 'DatasetConfig':
        """
        Raises:
            ConfigurationError: On invalid sizes, counts or unknown classes
        """
        if self.frame_size < 8:
            raise ConfigurationError(f"frame_size must be >= 8, got {self.frame_size}")
        if self.channels not in (1, 3):
            raise ConfigurationError(f"channels must be 1 or 3, got {self.channels}")
        if self.sequence_length < 2:
            raise ConfigurationError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if self.source_frames < self.sequence_length:
            raise ConfigurationError(
                f"source_frames ({self.source_frames}) must be >= sequence_length ({self.sequence_length})"
            )
        if self.train_per_class < 1 or self.validation_per_class < 1:
            raise ConfigurationError("per-class episode counts must be >= 1")
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ConfigurationError(f"need at least 2 distinct classes, got {list(self.classes)}")
        for name in self.classes:
            try:
                get_class(name)
            except NotFoundError as e:
                raise ConfigurationError(str(e))
        return self

    def per_class(self, split: str) -> int:
        if split == SPLIT_TRAIN:
            return self.train_per_class
        if split == SPLIT_VALIDATION:
            return self.validation_per_class
        raise ConfigurationError(f"unknown split '{split}', expected one of {SPLIT_CHOICES}")

    def as_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['classes'] = list(self.classes)
        return values

    @classmethod
    def from_dict(cls, values: Dict[str, Any]) -> 'DatasetConfig':
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown dataset settings: {', '.join(sorted(unknown))}")
        values = dict(values)
        if 'classes' in values:
            classes = values['classes']
            values['classes'] = tuple(classes.split(',') if isinstance(classes, str) else classes)
        return cls(**values)


@dataclass(frozen=True)
class ManifestEntry:
    """One episode row of the manifest."""
    episode_id: int
    split: str
    label: str
    seed: int
    path: str


@dataclass
class DatasetManifest:
    """
    Index of a generated corpus.

    Attributes:
        config: Dataset configuration used for generation
        master_seed: Seed every episode seed derives from
        entries: Episodes in id order
        version: Manifest format version
    """
    config: DatasetConfig
    master_seed: int
    entries: List[ManifestEntry] = field(default_factory=list)
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> List[ManifestEntry]:
        return [entry for entry in self.entries if entry.split == name]

    def counts(self) -> Dict[str, Dict[str, int]]:
        """{split: {label: episodes}}"""
        result: Dict[str, Dict[str, int]] = {name: {} for name in SPLIT_CHOICES}
        for entry in self.entries:
            bucket = result.setdefault(entry.split, {})
            bucket[entry.label] = bucket.get(entry.label, 0) + 1
        return result

    def entry(self, episode_id: int) -> ManifestEntry:
        for entry in self.entries:
            if entry.episode_id == episode_id:
                return entry
        raise NotFoundError(f"Episode {episode_id} is not in the manifest")
