# Repository package for network app
from .checkpoint_repository import Checkpoint, CheckpointRepository
from .training_log_repository import TrainingLogRepository, read_csv, render_csv

__all__ = ['Checkpoint', 'CheckpointRepository', 'TrainingLogRepository', 'read_csv', 'render_csv']
