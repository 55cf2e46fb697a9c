"""Little-endian reader/writer helpers for the GIL* binary formats.

All four formats share the same header: 4 ASCII magic bytes followed by a u32
version. Payload values are u32 integers and f32 reals.
"""

import struct

import numpy as np

from .errors import FormatError

VERSION = 1


class Writer:
    def __init__(self, magic):
        self.parts = [magic.encode("ascii"), struct.pack("<I", VERSION)]

    def u32(self, *values):
        self.parts.append(struct.pack(f"<{len(values)}I", *values))

    def f32(self, array):
        self.parts.append(np.asarray(array, dtype="<f4").tobytes())

    def raw(self, data):
        self.parts.append(data)

    def bytes(self):
        return b"".join(self.parts)


class Reader:
    def __init__(self, data, magic):
        self.data = data
        self.pos = 0
        got = self._take(4)
        if got != magic.encode("ascii"):
            raise FormatError(f"bad magic {got!r}, expected {magic!r}", 0)
        (version,) = self.u32()
        if version != VERSION:
            raise FormatError(f"unsupported version {version}", 4)

    def _take(self, n):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file: need {n} bytes, {len(self.data) - self.pos} left", self.pos)
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, n=1):
        return struct.unpack(f"<{n}I", self._take(4 * n))

    def f32(self, n):
        return np.frombuffer(self._take(4 * n), dtype="<f4").astype(np.float32)

    def raw(self, n):
        return self._take(n)

    def finish(self):
        if self.pos != len(self.data):
            raise FormatError(f"{len(self.data) - self.pos} trailing bytes", self.pos)


def f32_exact(array):
    """Round to float32 precision, returned as float64."""
    return np.asarray(array, dtype=np.float64).astype(np.float32).astype(np.float64)
