"""
Little-endian binary framing shared by the checkpoint, memory and episode formats.
"""

import struct
import zlib
from typing import Tuple

import numpy as np

from shared.exceptions import PersistenceError

_CRC = struct.Struct('<I')


class BinaryWriter:
    """Accumulates little-endian fields into one payload."""

    def __init__(self):
        self._parts = []

    def raw(self, data: bytes) -> 'BinaryWriter':
        self._parts.append(bytes(data))
        return self

    def u8(self, value: int) -> 'BinaryWriter':
        return self.raw(struct.pack('<B', value))

    def u16(self, value: int) -> 'BinaryWriter':
        return self.raw(struct.pack('<H', value))

    def u32(self, value: int) -> 'BinaryWriter':
        return self.raw(struct.pack('<I', value))

    def u64(self, value: int) -> 'BinaryWriter':
        return self.raw(struct.pack('<Q', value))

    def text(self, value: str) -> 'BinaryWriter':
        """UTF-8 bytes prefixed by their u32 length."""
        encoded = value.encode('utf-8')
        return self.u32(len(encoded)).raw(encoded)

    def array(self, values: np.ndarray, dtype: str) -> 'BinaryWriter':
        """Row-major array data cast to `dtype` (e.g. '<f4')."""
        return self.raw(np.ascontiguousarray(values, dtype=np.dtype(dtype)).tobytes())

    def getvalue(self) -> bytes:
        return b''.join(self._parts)

    def with_checksum(self) -> bytes:
        """Payload followed by the CRC32 of everything before it."""
        payload = self.getvalue()
        return payload + _CRC.pack(zlib.crc32(payload) & 0xFFFFFFFF)


class BinaryReader:
    """
    Sequential reader over a payload.

    Every read past the end raises PersistenceError naming `source`.
    """

    def __init__(self, payload: bytes, source: str = 'payload'):
        self._payload = memoryview(payload)
        self._offset = 0
        self.source = source

    @classmethod
    def verified(cls, blob: bytes, source: str) -> 'BinaryReader':
        """
        Strip and check the trailing CRC32.

        Raises:
            PersistenceError: If the file is too short or the checksum differs
        """
        if len(blob) < _CRC.size:
            raise PersistenceError(f"{source}: truncated file ({len(blob)} bytes)")
        payload, trailer = blob[:-_CRC.size], blob[-_CRC.size:]
        expected = _CRC.unpack(trailer)[0]
        actual = zlib.crc32(payload) & 0xFFFFFFFF
        if expected != actual:
            raise PersistenceError(
                f"{source}: checksum mismatch (stored {expected:08x}, computed {actual:08x}); file is corrupt or truncated"
            )
        return cls(payload, source)

    @property
    def remaining(self) -> int:
        return len(self._payload) - self._offset

    def raw(self, size: int) -> bytes:
        if size < 0 or self._offset + size > len(self._payload):
            raise PersistenceError(
                f"{self.source}: truncated at byte {self._offset} (needed {size}, {self.remaining} left)"
            )
        chunk = self._payload[self._offset:self._offset + size].tobytes()
        self._offset += size
        return chunk

    def _unpack(self, fmt: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.raw(size))[0]

    def u8(self) -> int:
        return self._unpack('<B')

    def u16(self) -> int:
        return self._unpack('<H')

    def u32(self) -> int:
        return self._unpack('<I')

    def u64(self) -> int:
        return self._unpack('<Q')

    def text(self) -> str:
        size = self.u32()
        try:
            return self.raw(size).decode('utf-8')
        except UnicodeDecodeError as e:
            raise PersistenceError(f"{self.source}: invalid UTF-8 text field ({str(e)})")

    def array(self, shape: Tuple[int, ...], dtype: str) -> np.ndarray:
        dtype = np.dtype(dtype)
        count = int(np.prod(shape, dtype=np.int64))
        data = self.raw(count * dtype.itemsize)
        return np.frombuffer(data, dtype=dtype).reshape(shape).copy()

    def expect_magic(self, magic: bytes) -> None:
        found = self.raw(len(magic))
        if found != magic:
            raise PersistenceError(f"{self.source}: bad magic {found!r}, expected {magic!r}")

    def expect_version(self, supported: int) -> int:
        version = self.u32()
        if version != supported:
            raise PersistenceError(f"{self.source}: unsupported format version {version} (expected {supported})")
        return version

    def expect_end(self) -> None:
        if self.remaining:
            raise PersistenceError(f"{self.source}: {self.remaining} unexpected trailing bytes")
