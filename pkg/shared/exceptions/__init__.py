"""
Custom exceptions for the episodic memory system.
"""


class EpisodicMemoryError(Exception):
    """Base exception for the episodic memory system."""
    pass


class ContractViolation(EpisodicMemoryError):
    """Raised when an operation receives inputs outside its contract (shapes, lengths, counts)."""
    pass


class ConfigurationError(EpisodicMemoryError):
    """Raised when a hyperparameter or configuration value is invalid."""
    pass


class NumericalError(EpisodicMemoryError):
    """Raised when a loss or gradient becomes non-finite."""
    pass


class DegenerateInputError(EpisodicMemoryError):
    """Raised when an input has no direction (zero-norm vector)."""
    pass


class InsufficientDataError(EpisodicMemoryError):
    """Raised when there is not enough data to fit a transform."""
    pass


class GenerationError(EpisodicMemoryError):
    """Raised when a synthetic motion program leaves the canvas."""
    pass


class PersistenceError(EpisodicMemoryError):
    """Raised when reading or writing an artifact fails."""
    pass


class NotFoundError(EpisodicMemoryError):
    """Raised when a requested artifact or record is not found."""
    pass
