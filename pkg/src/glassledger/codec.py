"""Binary packing helpers.

Every on-disk and on-wire structure in this package is built from the same
primitives: big-endian fixed-width integers and u32-length-prefixed byte
strings. A Reader enforces strict consumption so that truncated or padded
input is always rejected.
"""

import struct

from .errors import WireError


def u8(n: int) -> bytes:
    return struct.pack(">B", n)


def u32(n: int) -> bytes:
    return struct.pack(">I", n)


def u64(n: int) -> bytes:
    return struct.pack(">Q", n)


def lp(data: bytes) -> bytes:
    """Length-prefixed bytes: u32 length followed by the raw bytes."""
    return struct.pack(">I", len(data)) + data


class Reader:
    """Sequential decoder over a bytes buffer."""

    __slots__ = ("buf", "pos")

    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def _take(self, n: int) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise WireError("truncated input")
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def u8(self) -> int:
        return self._take(1)[0]

    def u32(self) -> int:
        return struct.unpack(">I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self._take(8))[0]

    def raw(self, n: int) -> bytes:
        return self._take(n)

    def lp(self) -> bytes:
        return self._take(self.u32())

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise WireError("trailing bytes after message")

    @property
    def remaining(self) -> int:
        return len(self.buf) - self.pos
