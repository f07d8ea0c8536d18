"""Content-addressed node store.

Both tree levels, data blocks, and any other immutable blob live here, keyed
by BLAKE2b-256 of their bytes. Writing bytes that are already present is a
no-op, which is what makes copy-on-write updates and idempotent recovery
cheap: re-deriving an identical node costs nothing on disk.

The file variant is an append-only log of records:

    32-byte hash | u32 length | payload

prefixed by a 4-byte magic and a u32 format version. Torn trailing records
(from a crash mid-append) are ignored on open.
"""

import os
import struct
import threading

from .errors import CorruptTree, StorageError
from .hashing import HASH_SIZE, blake2b256

NODE_STORE_MAGIC = b"GLNS"
NODE_STORE_VERSION = 1


class MemoryNodeStore:
    """In-memory store for tests and auditor replicas."""

    def __init__(self):
        self._data: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self.write_count = 0  # number of genuinely new records

    def put(self, payload: bytes) -> bytes:
        h = blake2b256(payload)
        with self._lock:
            if h not in self._data:
                self._data[h] = payload
                self.write_count += 1
        return h

    def get(self, h: bytes) -> bytes:
        try:
            return self._data[h]
        except KeyError:
            raise CorruptTree(f"missing node {h.hex()[:16]}")

    def __contains__(self, h: bytes) -> bool:
        return h in self._data

    def __len__(self) -> int:
        return len(self._data)

    def close(self) -> None:
        pass


class FileNodeStore:
    """Append-only content-addressed log with an in-memory index.

    The full payload map is kept in memory (desk-scale store); the file is
    the durable source rebuilt into the map on open.
    """

    def __init__(self, path):
        self.path = str(path)
        self._data: dict[bytes, bytes] = {}
        self._lock = threading.Lock()
        self.write_count = 0
        fresh = not os.path.exists(self.path)
        self._f = open(self.path, "a+b")
        if fresh or os.path.getsize(self.path) == 0:
            self._f.write(NODE_STORE_MAGIC + struct.pack(">I", NODE_STORE_VERSION))
            self._f.flush()
            os.fsync(self._f.fileno())
        else:
            self._load()

    def _load(self):
        with open(self.path, "rb") as f:
            header = f.read(8)
            if header[:4] != NODE_STORE_MAGIC:
                raise StorageError(f"{self.path}: bad node store magic")
            good_end = 8
            while True:
                rec = f.read(HASH_SIZE + 4)
                if len(rec) < HASH_SIZE + 4:
                    break
                h = rec[:HASH_SIZE]
                (length,) = struct.unpack(">I", rec[HASH_SIZE:])
                payload = f.read(length)
                if len(payload) < length or blake2b256(payload) != h:
                    break  # torn or corrupt tail record
                self._data[h] = payload
                good_end += HASH_SIZE + 4 + length
        if good_end < os.path.getsize(self.path):
            self._f.truncate(good_end)

    def put(self, payload: bytes) -> bytes:
        h = blake2b256(payload)
        with self._lock:
            if h in self._data:
                return h
            try:
                self._f.write(h + struct.pack(">I", len(payload)) + payload)
                self._f.flush()
            except OSError as e:
                raise StorageError(f"node store write failed: {e}")
            self._data[h] = payload
            self.write_count += 1
        return h

    def sync(self) -> None:
        os.fsync(self._f.fileno())

    def get(self, h: bytes) -> bytes:
        try:
            return self._data[h]
        except KeyError:
            raise CorruptTree(f"missing node {h.hex()[:16]}")

    def __contains__(self, h: bytes) -> bool:
        return h in self._data

    def __len__(self) -> int:
        return len(self._data)

    def close(self) -> None:
        self._f.close()
