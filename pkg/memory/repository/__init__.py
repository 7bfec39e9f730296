# Repository package for memory app
from .memory_repository import MemoryRepository, memories_equal

__all__ = ['MemoryRepository', 'memories_equal']
