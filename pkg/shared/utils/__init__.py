"""
Utility helpers shared across the episodic memory apps.
"""

import os
import tempfile
import threading
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

from shared.exceptions import PersistenceError

PathLike = Union[str, os.PathLike]


def atomic_write_bytes(path: PathLike, payload: bytes) -> Path:
    """
    Write bytes to a path so that readers see either the old file or the new one.

    Args:
        path: Destination path
        payload: Complete file contents

    Returns:
        The destination path

    Raises:
        PersistenceError: If the directory is not writable or the write fails
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f'.{target.name}.', suffix='.tmp')
        try:
            with os.fdopen(fd, 'wb') as handle:
                handle.write(payload)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_name, target)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise
    except OSError as e:
        raise PersistenceError(f"Failed to write '{target}': {str(e)}")
    return target


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Text variant of atomic_write_bytes (UTF-8, LF line endings)."""
    return atomic_write_bytes(path, text.encode('utf-8'))


def read_bytes(path: PathLike) -> bytes:
    """
    Read a whole file.

    Raises:
        PersistenceError: If the file cannot be read
    """
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise PersistenceError(f"Failed to read '{path}': {str(e)}")


def echo_lines(values: Dict[str, Any], prefix: str = '') -> List[str]:
    """Render a configuration mapping as sorted `key=value` lines."""
    lines = []
    for key in sorted(values):
        value = values[key]
        if isinstance(value, (list, tuple)):
            value = ','.join(str(v) for v in value)
        lines.append(f"{prefix}{key}={value}")
    return lines


def chunked(items: List[Any], size: int) -> Iterable[List[Any]]:
    """Yield consecutive slices of at most `size` items."""
    for start in range(0, len(items), size):
        yield items[start:start + size]


class ReadWriteLock:
    """
    Many concurrent readers or one exclusive writer.

    Writers wait for active readers to drain; new readers wait while a writer
    holds or is waiting for the lock.
    """

    def __init__(self):
        self._condition = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self):
        with self._condition:
            while self._writer or self._waiting_writers:
                self._condition.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._condition:
                self._readers -= 1
                if self._readers == 0:
                    self._condition.notify_all()

    @contextmanager
    def write(self):
        with self._condition:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._condition.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._condition:
                self._writer = False
                self._condition.notify_all()
