"""
Loader interface for labelled episodes.

Training and evaluation read episodes through an EpisodeSource, so a
different corpus only needs a new implementation of this interface.
"""

from abc import ABC, abstractmethod
from pathlib import Path
from typing import Dict, Iterator, List, Sequence, Tuple

from episodes.repository import EpisodeRepository, ManifestRepository
from network.types import EpisodeTensor
from shared.constants import SPLIT_CHOICES
from shared.exceptions import ConfigurationError, NotFoundError, PersistenceError
from shared.utils import PathLike


class EpisodeSource(ABC):
    """Named splits of labelled episodes addressed by integer id."""

    @property
    @abstractmethod
    def classes(self) -> Tuple[str, ...]:
        """Class labels in label order."""

    @abstractmethod
    def episode_ids(self, split: str) -> List[int]:
        """Ids of the episodes in a split, in id order."""

    @abstractmethod
    def load(self, episode_id: int) -> EpisodeTensor:
        """
        Raises:
            NotFoundError: If the id is unknown
        """

    def episodes(self, split: str) -> Iterator[EpisodeTensor]:
        for episode_id in self.episode_ids(split):
            yield self.load(episode_id)

    def load_split(self, split: str) -> List[EpisodeTensor]:
        return list(self.episodes(split))

    def _check_split(self, split: str) -> None:
        if split not in SPLIT_CHOICES:
            raise ConfigurationError(f"unknown split '{split}', expected one of {SPLIT_CHOICES}")


class SyntheticEpisodeSource(EpisodeSource):
    """Episodes of a generated corpus, read through its manifest."""

    def __init__(self, root: PathLike):
        path = Path(root)
        self.root = path if path.is_dir() else path.parent
        self.manifest = ManifestRepository().load(path)
        self.repository = EpisodeRepository()
        self._entries = {entry.episode_id: entry for entry in self.manifest.entries}

    @property
    def classes(self) -> Tuple[str, ...]:
        return self.manifest.config.classes

    def episode_ids(self, split: str) -> List[int]:
        self._check_split(split)
        return [entry.episode_id for entry in self.manifest.split(split)]

    def load(self, episode_id: int) -> EpisodeTensor:
        try:
            entry = self._entries[episode_id]
        except KeyError:
            raise NotFoundError(f"Episode {episode_id} is not in the manifest")
        episode = self.repository.load(self.root / entry.path)
        if episode.episode_id != entry.episode_id or episode.label != entry.label:
            raise PersistenceError(
                f"{entry.path} holds episode {episode.episode_id} ({episode.label}), "
                f"manifest expects {entry.episode_id} ({entry.label})"
            )
        return episode


class InMemoryEpisodeSource(EpisodeSource):
    """Episodes already in memory, keyed by split."""

    def __init__(self, splits: Dict[str, Sequence[EpisodeTensor]]):
        self._splits = {name: list(episodes) for name, episodes in splits.items()}
        self._by_id = {}
        for name, episodes in self._splits.items():
            self._check_split(name)
            for episode in episodes:
                if episode.episode_id is None or episode.episode_id in self._by_id:
                    raise ConfigurationError(f"episodes need unique ids, got {episode.episode_id}")
                self._by_id[episode.episode_id] = episode

    @property
    def classes(self) -> Tuple[str, ...]:
        return tuple(sorted({episode.label for episode in self._by_id.values() if episode.label is not None}))

    def episode_ids(self, split: str) -> List[int]:
        self._check_split(split)
        return [episode.episode_id for episode in self._splits.get(split, [])]

    def load(self, episode_id: int) -> EpisodeTensor:
        try:
            return self._by_id[episode_id]
        except KeyError:
            raise NotFoundError(f"Episode {episode_id} not found")
