"""
Run configuration: settings defaults, then a `key=value` config file, then
command-line flags.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Mapping, Optional

from decouple import Config, Csv, RepositoryEnv, UndefinedValueError
from django.conf import settings

from episodes.types import DatasetConfig
from network.config import ModelConfig, TrainingConfig
from shared.exceptions import ConfigurationError
from shared.utils import PathLike

logger = logging.getLogger(__name__)

MODEL_KEYS = (
    'frame_size', 'channels', 'sequence_length', 'encoder_length', 'convlstm_widths', 'conv_widths',
    'kernel_size', 'fc_width', 'lstm_width', 'latent_noise', 'dropout_rate', 'eta', 'dtype'
)
DATASET_KEYS = (
    'frame_size', 'channels', 'sequence_length', 'source_frames', 'train_per_class', 'validation_per_class',
    'classes'
)
TRAINING_KEYS = ('batch_size', 'lr0', 'gamma', 'clip_norm', 'checkpoint_every')


def caster_for(default: Any) -> Callable[[str], Any]:
    """decouple cast matching the type of a default value."""
    if isinstance(default, bool):
        return bool
    if isinstance(default, int):
        return int
    if isinstance(default, float):
        return float
    if isinstance(default, tuple):
        item = type(default[0]) if default else str
        return Csv(cast=item, post_process=tuple)
    return str


def read_layer(repository: Mapping[str, str], defaults: Dict[str, Any], origin: str) -> Dict[str, Any]:
    """
    Typed values of every key a repository defines.

    Args:
        repository: Raw string values (a decouple repository or a plain dict)
        defaults: Known keys and the values that fix their types
        origin: Name of the layer for error messages

    Raises:
        ConfigurationError: On unknown keys or values that do not cast
    """
    keys = list(getattr(repository, 'data', repository))
    unknown = sorted(set(keys) - set(defaults))
    if unknown:
        raise ConfigurationError(f"unknown configuration keys in {origin}: {', '.join(unknown)}")
    reader = Config(repository)
    values = {}
    for key in keys:
        try:
            values[key] = reader(key, cast=caster_for(defaults[key]))
        except (ValueError, UndefinedValueError) as e:
            raise ConfigurationError(f"invalid value for '{key}' in {origin}: {str(e)}")
    return values


@dataclass(frozen=True)
class RunConfig:
    """
    Fully resolved settings of one CLI invocation.

    Attributes:
        values: Every known key with its typed value
        config_path: Config file the values were read from, if any
    """
    values: Dict[str, Any] = field(default_factory=dict)
    config_path: Optional[str] = None

    @classmethod
    def resolve(
        cls,
        config_path: Optional[PathLike] = None,
        overrides: Optional[Dict[str, Any]] = None,
        assignments: Optional[Dict[str, str]] = None,
        defaults: Optional[Dict[str, Any]] = None
    ) -> 'RunConfig':
        """
        Layer defaults <- config file <- flags.

        Args:
            config_path: Flat `key=value` file (`#` comments)
            overrides: Typed flag values; None entries are ignored
            assignments: Raw `--set key=value` strings, cast like file values
            defaults: Defaults layer (settings.EPIMEM_DEFAULTS when omitted)

        Raises:
            ConfigurationError: On unknown keys or values that do not cast
            OSError: If the config file cannot be read
        """
        defaults = dict(settings.EPIMEM_DEFAULTS if defaults is None else defaults)
        values = dict(defaults)
        if config_path is not None:
            values.update(read_layer(RepositoryEnv(str(config_path)), defaults, str(config_path)))
        if assignments:
            values.update(read_layer(assignments, defaults, '--set'))
        for key, value in (overrides or {}).items():
            if key not in defaults:
                raise ConfigurationError(f"unknown configuration key '{key}'")
            if value is not None:
                values[key] = value
        run_config = cls(values=values, config_path=str(config_path) if config_path else None)
        logger.debug(f"Resolved run configuration: {values}")
        return run_config

    def __getitem__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise ConfigurationError(f"unknown configuration key '{key}'")

    @property
    def seed(self) -> int:
        return int(self.values['seed'])

    def model_config(self) -> ModelConfig:
        return ModelConfig.from_dict({key: self.values[key] for key in MODEL_KEYS})

    def dataset_config(self) -> DatasetConfig:
        return DatasetConfig.from_dict({key: self.values[key] for key in DATASET_KEYS}).validate()

    def training_config(self) -> TrainingConfig:
        return TrainingConfig(**{key: self.values[key] for key in TRAINING_KEYS})

    def echo(self, command: str) -> Dict[str, Any]:
        """Values to write as `key=value` lines into the command's artifacts."""
        echo = dict(self.values)
        echo['command'] = command
        if self.config_path:
            echo['config_file'] = self.config_path
        return echo
