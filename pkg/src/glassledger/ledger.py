"""Two-level ledger: a state tree under a block tree.

Every persisted batch becomes one DataBlock. The block records the state-tree
root after applying its writes, and is itself stored as a leaf of the block
tree keyed by big-endian block number. The block tree's root hash, paired
with the latest block number, is the public digest of the whole shard.

State-tree values are wrapped in a small envelope, `u64 birth_block | value`,
so any lookup also reveals exactly which block wrote the value. Auditors can
reproduce the envelope because they know the block number they are replaying.

Directory layout (all integers big-endian, files carry magic + version):

    nodes.dat   content-addressed node/blob log (see store.py)
    blocks.map  u64 block_no | 32-byte block hash records
    wal.dat     transaction WAL (owned by the transaction manager)
"""

from __future__ import annotations

import bisect
import os
import struct
import threading
from dataclasses import dataclass, field

from . import postree
from .codec import Reader, lp, u64
from .errors import InvalidInput, NotFound, StorageError
from .hashing import EMPTY_HASH, HASH_SIZE, blake2b256
from .postree import ChunkConfig, DEFAULT_CONFIG, Entry, TreeRoot

BLOCK_MAP_MAGIC = b"GLBM"
BLOCK_MAP_VERSION = 1


def block_key(block_no: int) -> bytes:
    return struct.pack(">Q", block_no)


def encode_value(birth_block: int, value: bytes) -> bytes:
    return struct.pack(">Q", birth_block) + value


def decode_value(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 8:
        raise InvalidInput("state value envelope too short")
    return struct.unpack(">Q", payload[:8])[0], payload[8:]


@dataclass(frozen=True)
class DataBlock:
    block_no: int
    timestamp: int  # milliseconds since epoch
    txn_ids: tuple[bytes, ...]  # serialized tids, commit order
    state_root: bytes

    def encode(self) -> bytes:
        parts = [u64(self.block_no), u64(self.timestamp), u64(len(self.txn_ids))]
        parts.extend(lp(t) for t in self.txn_ids)
        parts.append(self.state_root)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "DataBlock":
        r = Reader(data)
        block_no = r.u64()
        timestamp = r.u64()
        n = r.u64()
        tids = tuple(r.lp() for _ in range(n))
        state_root = r.raw(HASH_SIZE)
        r.done()
        return cls(block_no, timestamp, tids, state_root)

    @property
    def block_hash(self) -> bytes:
        return blake2b256(self.encode())


@dataclass(frozen=True)
class LedgerDigest:
    digest: bytes
    block_no: int

    def encode(self) -> bytes:
        return self.digest + u64(self.block_no)

    @classmethod
    def decode(cls, data: bytes) -> "LedgerDigest":
        r = Reader(data)
        d = cls(r.raw(HASH_SIZE), r.u64())
        r.done()
        return d


GENESIS = LedgerDigest(EMPTY_HASH, 0)


@dataclass
class WriteBatch:
    """Independent writes destined for a single block: keys are unique."""

    writes: list[tuple[bytes, bytes, bytes]]  # (key, value, serialized tid)

    def __post_init__(self):
        keys = [k for k, _, _ in self.writes]
        if len(set(keys)) != len(keys):
            raise InvalidInput("batch keys must be unique")

    def txn_ids(self) -> tuple[bytes, ...]:
        seen = []
        for _, _, tid in self.writes:
            if tid not in seen:
                seen.append(tid)
        return tuple(seen)


class MemoryBlockMap:
    def __init__(self):
        self.records: list[tuple[int, bytes]] = []
        self.truncated = False

    def append(self, block_no: int, block_hash: bytes) -> None:
        self.records.append((block_no, block_hash))

    def load(self) -> list[tuple[int, bytes]]:
        return list(self.records)

    def close(self) -> None:
        pass


class FileBlockMap:
    """Append-only block_no -> block hash log with torn-tail recovery."""

    RECORD = 8 + HASH_SIZE

    def __init__(self, path):
        self.path = str(path)
        self.truncated = False
        fresh = not os.path.exists(self.path) or os.path.getsize(self.path) == 0
        self._f = open(self.path, "a+b")
        if fresh:
            self._f.write(BLOCK_MAP_MAGIC + struct.pack(">I", BLOCK_MAP_VERSION))
            self._f.flush()
            os.fsync(self._f.fileno())

    def append(self, block_no: int, block_hash: bytes) -> None:
        try:
            self._f.write(struct.pack(">Q", block_no) + block_hash)
            self._f.flush()
            os.fsync(self._f.fileno())
        except OSError as e:
            raise StorageError(f"block map write failed: {e}")

    def load(self) -> list[tuple[int, bytes]]:
        out = []
        with open(self.path, "rb") as f:
            header = f.read(8)
            if header[:4] != BLOCK_MAP_MAGIC:
                raise StorageError(f"{self.path}: bad block map magic")
            good = 8
            while True:
                rec = f.read(self.RECORD)
                if len(rec) < self.RECORD:
                    if rec:
                        self.truncated = True
                    break
                out.append((struct.unpack(">Q", rec[:8])[0], rec[8:]))
                good += self.RECORD
        size = os.path.getsize(self.path)
        if good < size:
            self._f.truncate(good)
        return out

    def close(self) -> None:
        self._f.close()


@dataclass
class RecoveryReport:
    blocks: int = 0
    truncated_block_map: bool = False
    reused_blocks: int = 0


class LedgerStore:
    """One shard's ledger: block formation, reads, and crash recovery.

    A single logical writer appends blocks; readers work against immutable
    historical roots without locks beyond a brief snapshot of the tip state.
    """

    def __init__(self, store, block_map, cfg: ChunkConfig = DEFAULT_CONFIG):
        self.store = store
        self.block_map = block_map
        self.cfg = cfg
        self._mu = threading.Lock()
        self.lower_root: TreeRoot = postree.EMPTY_ROOT
        self.upper_root: TreeRoot = postree.EMPTY_ROOT
        self.block_no = 0
        # digest_history[b] = block-tree root hash after block b; [0] = genesis
        self.digest_history: list[bytes] = [EMPTY_HASH]
        self._blocks: list[DataBlock] = []  # cache, index b-1
        self.report = RecoveryReport()
        self._recover()

    @classmethod
    def in_memory(cls, cfg: ChunkConfig = DEFAULT_CONFIG) -> "LedgerStore":
        from .store import MemoryNodeStore

        return cls(MemoryNodeStore(), MemoryBlockMap(), cfg)

    @classmethod
    def open(cls, data_dir, cfg: ChunkConfig = DEFAULT_CONFIG) -> "LedgerStore":
        from .store import FileNodeStore

        os.makedirs(data_dir, exist_ok=True)
        store = FileNodeStore(os.path.join(data_dir, "nodes.dat"))
        block_map = FileBlockMap(os.path.join(data_dir, "blocks.map"))
        return cls(store, block_map, cfg)

    # ------------------------------------------------------------- recovery

    def _recover(self) -> None:
        """Rebuild tip state from the block map and node store.

        Persisted blocks are reused verbatim (their timestamps must not be
        re-minted), so the recovered digest chain is identical to the chain
        before the crash. Blocks whose map record or payload did not survive
        are simply not visible; their writes are re-persisted by the
        transaction manager's WAL replay.
        """
        records = self.block_map.load()
        self.report.truncated_block_map = getattr(self.block_map, "truncated", False)
        for block_no, block_hash in records:
            if block_no != self.block_no + 1:
                raise StorageError(
                    f"block map gap: expected {self.block_no + 1}, found {block_no}"
                )
            if block_hash not in self.store:
                # map record survived but the block payload did not; treat
                # everything from here on as unpersisted
                self.report.truncated_block_map = True
                break
            block_bytes = self.store.get(block_hash)
            block = DataBlock.decode(block_bytes)
            if block.block_no != block_no or block.block_hash != block_hash:
                raise StorageError(f"block {block_no} does not match its map record")
            self._apply_block(block, block_bytes)
            self.report.reused_blocks += 1
        self.report.blocks = self.block_no
        if self.block_no:
            last = self._blocks[-1]
            count = 0
            lower = TreeRoot(last.state_root, 1 if last.state_root != EMPTY_HASH else 0)
            for leaf in postree.iter_leaves(lower, self.store):
                count += len(leaf.entries)
            self.lower_root = TreeRoot(last.state_root, count)

    def _apply_block(self, block: DataBlock, block_bytes: bytes) -> None:
        entry = Entry(block_key(block.block_no), block_bytes)
        self.upper_root = postree.update(self.upper_root, [entry], self.cfg, self.store)
        self.block_no = block.block_no
        self.digest_history.append(self.upper_root.root_hash)
        self._blocks.append(block)

    # -------------------------------------------------------------- appends

    def append_block(self, batch: WriteBatch, now: int) -> tuple[DataBlock, LedgerDigest]:
        """Apply one batch of independent writes as the next block."""
        writes = sorted(batch.writes, key=lambda w: w[0])
        next_no = self.block_no + 1
        updates = []
        for key, value, _tid in writes:
            found, path = postree.lookup(self.lower_root, key, self.store)
            prev = postree.node_hash(path[-1]) if found is not None else None
            updates.append(Entry(key, encode_value(next_no, value), prev))
        new_lower = postree.update(self.lower_root, updates, self.cfg, self.store)

        block = DataBlock(next_no, now, batch.txn_ids(), new_lower.root_hash)
        block_bytes = block.encode()
        self.store.put(block_bytes)

        entry = Entry(block_key(next_no), block_bytes)
        new_upper = postree.update(self.upper_root, [entry], self.cfg, self.store)
        self.block_map.append(next_no, block.block_hash)

        with self._mu:
            self.lower_root = new_lower
            self.upper_root = new_upper
            self.block_no = next_no
            self.digest_history.append(new_upper.root_hash)
            self._blocks.append(block)
        return block, LedgerDigest(new_upper.root_hash, next_no)

    # ---------------------------------------------------------------- reads

    def digest(self) -> LedgerDigest:
        with self._mu:
            return LedgerDigest(self.digest_history[self.block_no], self.block_no)

    def digest_at(self, block_no: int) -> LedgerDigest:
        if not (0 <= block_no <= self.block_no):
            raise NotFound(f"no digest for block {block_no}")
        return LedgerDigest(self.digest_history[block_no], block_no)

    def has_digest(self, d: LedgerDigest) -> bool:
        return d.block_no <= self.block_no and self.digest_history[d.block_no] == d.digest

    def get_block(self, block_no: int) -> tuple[DataBlock, list[postree.PosNode]]:
        """Block plus its block-tree path at the current tip."""
        if not (1 <= block_no <= self.block_no):
            raise NotFound(f"block {block_no} out of range")
        entry, path = postree.lookup(self.upper_root, block_key(block_no), self.store)
        if entry is None:
            raise NotFound(f"block {block_no} missing from block tree")
        return DataBlock.decode(entry.value), path

    def block(self, block_no: int) -> DataBlock:
        if not (1 <= block_no <= self.block_no):
            raise NotFound(f"block {block_no} out of range")
        return self._blocks[block_no - 1]

    def state_root_at(self, block_no: int) -> TreeRoot:
        """State-tree root as of a block (0 = genesis, empty)."""
        if block_no == 0:
            return postree.EMPTY_ROOT
        root = self.block(block_no).state_root
        return TreeRoot(root, 0 if root == EMPTY_HASH else 1)

    def get_latest(self, key: bytes) -> tuple[bytes, int] | None:
        """(value, birth block) for the newest persisted version of key."""
        with self._mu:
            lower = self.lower_root
        entry, _ = postree.lookup(lower, key, self.store)
        if entry is None:
            return None
        birth, value = decode_value(entry.value)
        return value, birth

    def resolve_timestamp(self, timestamp: int) -> int:
        """Greatest block number whose timestamp is <= the given one (0 if none)."""
        stamps = [b.timestamp for b in self._blocks]
        return bisect.bisect_right(stamps, timestamp)

    def get_versioned(
        self, key: bytes, at_block: int | None = None, at_timestamp: int | None = None
    ) -> tuple[bytes, int] | None:
        """Value of key as of a block or timestamp, with its birth block."""
        if at_block is None:
            if at_timestamp is None:
                raise InvalidInput("need at_block or at_timestamp")
            at_block = self.resolve_timestamp(at_timestamp)
        if at_block == 0:
            return None
        if not (1 <= at_block <= self.block_no):
            raise NotFound(f"block {at_block} out of range")
        entry, _ = postree.lookup(self.state_root_at(at_block), key, self.store)
        if entry is None:
            return None
        birth, value = decode_value(entry.value)
        return value, birth

    def close(self) -> None:
        self.store.close()
        self.block_map.close()
