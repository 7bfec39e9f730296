# Repository package for episodes app
from .episode_repository import EpisodeRepository
from .manifest_repository import MANIFEST_NAME, ManifestRepository

__all__ = ['EpisodeRepository', 'MANIFEST_NAME', 'ManifestRepository']
