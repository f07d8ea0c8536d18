"""Content-defined-chunked Merkle search tree.

The same structure backs both halves of the ledger: the state tree keyed by
user keys and the block tree keyed by big-endian block numbers. Leaves hold
sorted entries; index nodes hold (first_key, child_hash) pairs. A node's
identity is the BLAKE2b-256 of its canonical serialization, so identical
content always deduplicates in the store and historical roots stay readable
forever (copy-on-write, no in-place mutation).

Node boundaries are chosen by a pattern match on each entry's polynomial
fingerprint, clamped to [min_entries, max_entries]. Because the split
decision depends only on entry content and the position of the previous
boundary, the tree shape is a pure function of the final entry sequence:
building in one batch, in shuffled increments, or updating an existing tree
all converge to byte-identical roots.

Canonical node layout (all integers big-endian):

    level u8 | kind u8 (0=leaf, 1=index) | count u32 | count * entry
    entry: klen u32 | key | vlen u32 | value | plen u32 | prev_hash (0 or 32 bytes)

Index entries reuse the same triple: key = child's first key, value = child
hash, prev absent.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .codec import Reader, lp, u8, u32
from .errors import CorruptTree, InvalidInput, NotFound
from .hashing import EMPTY_HASH, HASH_SIZE, blake2b256, pattern_fingerprint

KIND_LEAF = 0
KIND_INDEX = 1


@dataclass(frozen=True)
class Entry:
    key: bytes
    value: bytes
    prev_hash: bytes | None = None


@dataclass(frozen=True)
class PosNode:
    level: int
    entries: tuple[Entry, ...]

    @property
    def kind(self) -> int:
        return KIND_LEAF if self.level == 0 else KIND_INDEX

    @property
    def first_key(self) -> bytes:
        return self.entries[0].key


@dataclass(frozen=True)
class TreeRoot:
    root_hash: bytes
    entry_count: int


EMPTY_ROOT = TreeRoot(EMPTY_HASH, 0)


@dataclass(frozen=True)
class ChunkConfig:
    pattern_bits: int = 5
    min_entries: int = 8
    max_entries: int = 128

    def __post_init__(self):
        if not (1 <= self.pattern_bits <= 16):
            raise InvalidInput("pattern_bits must be in [1, 16]")
        if not (1 <= self.min_entries <= self.max_entries):
            raise InvalidInput("need 1 <= min_entries <= max_entries")


DEFAULT_CONFIG = ChunkConfig()


def encode_entry(e: Entry) -> bytes:
    prev = e.prev_hash or b""
    return lp(e.key) + lp(e.value) + lp(prev)


def encode_node(node: PosNode) -> bytes:
    parts = [u8(node.level), u8(node.kind), u32(len(node.entries))]
    parts.extend(encode_entry(e) for e in node.entries)
    return b"".join(parts)


def decode_node(data: bytes) -> PosNode:
    r = Reader(data)
    level = r.u8()
    kind = r.u8()
    count = r.u32()
    entries = []
    for _ in range(count):
        key = r.lp()
        value = r.lp()
        prev = r.lp()
        if prev and len(prev) != HASH_SIZE:
            raise CorruptTree("bad prev_hash length")
        entries.append(Entry(key, value, prev or None))
    r.done()
    node = PosNode(level, tuple(entries))
    if node.kind != kind:
        raise CorruptTree("node kind does not match level")
    return node


def node_hash(node: PosNode) -> bytes:
    return blake2b256(encode_node(node))


class Chunker:
    """Streams entries into pattern-bounded chunks.

    A boundary is declared after an entry whose fingerprint has its low
    `pattern_bits` bits zero, once at least min_entries have accumulated;
    max_entries forces a boundary regardless of pattern.
    """

    def __init__(self, cfg: ChunkConfig):
        self.cfg = cfg
        self._mask = (1 << cfg.pattern_bits) - 1
        self._buf: list[Entry] = []

    @property
    def clean(self) -> bool:
        return not self._buf

    def feed(self, entry: Entry) -> list[Entry] | None:
        """Add one entry; returns a completed chunk when a boundary lands."""
        self._buf.append(entry)
        n = len(self._buf)
        if n >= self.cfg.max_entries or (
            n >= self.cfg.min_entries
            and pattern_fingerprint(encode_entry(entry)) & self._mask == 0
        ):
            chunk = self._buf
            self._buf = []
            return chunk
        return None

    def flush(self) -> list[Entry] | None:
        if not self._buf:
            return None
        chunk = self._buf
        self._buf = []
        return chunk


def _check_sorted(entries, what: str) -> None:
    for a, b in zip(entries, entries[1:]):
        if a.key >= b.key:
            raise InvalidInput(f"{what} must be strictly sorted by key")


def chunk_entries(entries: list[Entry], cfg: ChunkConfig = DEFAULT_CONFIG) -> list[PosNode]:
    """Split sorted entries into leaf nodes. Boundary positions depend only
    on entry content and the previous boundary, never on batching history."""
    _check_sorted(entries, "entries")
    chunker = Chunker(cfg)
    nodes = []
    for e in entries:
        chunk = chunker.feed(e)
        if chunk:
            nodes.append(PosNode(0, tuple(chunk)))
    tail = chunker.flush()
    if tail:
        nodes.append(PosNode(0, tuple(tail)))
    return nodes


def _write_node(store, node: PosNode) -> bytes:
    return store.put(encode_node(node))


def _load_node(store, h: bytes) -> PosNode:
    return decode_node(store.get(h))


def _build_levels(store, items: list[tuple[bytes, bytes]], level: int, cfg: ChunkConfig) -> bytes:
    """Collapse (first_key, child_hash) items upward until one node remains."""
    while len(items) > 1:
        chunker = Chunker(cfg)
        next_items = []
        for key, child in items:
            e = Entry(key, child)
            chunk = chunker.feed(e)
            if chunk:
                node = PosNode(level, tuple(chunk))
                next_items.append((node.first_key, _write_node(store, node)))
        tail = chunker.flush()
        if tail:
            node = PosNode(level, tuple(tail))
            next_items.append((node.first_key, _write_node(store, node)))
        items = next_items
        level += 1
    return items[0][1]


def build(entries: list[Entry], cfg: ChunkConfig = DEFAULT_CONFIG, store=None) -> TreeRoot:
    """Build a tree from scratch over sorted entries; all nodes land in store."""
    if not entries:
        return EMPTY_ROOT
    leaves = chunk_entries(entries, cfg)
    items = [(n.first_key, _write_node(store, n)) for n in leaves]
    return TreeRoot(_build_levels(store, items, 1, cfg), len(entries))


def _collect_leaf_refs(store, root_hash: bytes) -> list[tuple[bytes, bytes]]:
    """(first_key, leaf_hash) for every leaf, left to right. Only index
    nodes are decoded; leaf payloads stay untouched."""
    node = _load_node(store, root_hash)
    if node.level == 0:
        return [(node.first_key, root_hash)]
    out: list[tuple[bytes, bytes]] = []
    stack = [node]
    while stack:
        n = stack.pop()
        if n.level == 1:
            out.extend((e.key, e.value) for e in n.entries)
        else:
            for e in reversed(n.entries):
                stack.append(_load_node(store, e.value))
    # stack order: level-1 nodes are visited right-to-left at each level,
    # but extend happens per node; re-sort by key to be safe and cheap.
    out.sort(key=lambda t: t[0])
    return out


def update(root: TreeRoot, updates: list[Entry], cfg: ChunkConfig = DEFAULT_CONFIG, store=None) -> TreeRoot:
    """Copy-on-write update. Only leaves overlapping the update keys are
    re-chunked; once a fresh boundary coincides with an old one the remaining
    leaves are reused by reference. Upper levels are re-derived from the new
    leaf sequence (identical index nodes dedupe in the store)."""
    if not updates:
        return root
    _check_sorted(updates, "updates")
    if root.entry_count == 0:
        return build(updates, cfg, store)
    if root.root_hash not in store:
        raise NotFound("unknown tree root")

    leaf_refs = _collect_leaf_refs(store, root.root_hash)
    chunker = Chunker(cfg)
    items: list[tuple[bytes, bytes]] = []
    replaced = 0
    ui = 0

    def emit(chunk):
        node = PosNode(0, tuple(chunk))
        items.append((node.first_key, _write_node(store, node)))

    for i, (first_key, leaf_hash) in enumerate(leaf_refs):
        upper = leaf_refs[i + 1][0] if i + 1 < len(leaf_refs) else None
        has_upd = ui < len(updates) and (upper is None or updates[ui].key < upper)
        if not has_upd and chunker.clean:
            items.append((first_key, leaf_hash))
            continue
        old = _load_node(store, leaf_hash).entries
        merged: list[Entry] = []
        oi = 0
        while ui < len(updates) and (upper is None or updates[ui].key < upper):
            u = updates[ui]
            while oi < len(old) and old[oi].key < u.key:
                merged.append(old[oi])
                oi += 1
            if oi < len(old) and old[oi].key == u.key:
                oi += 1
                replaced += 1
            merged.append(u)
            ui += 1
        merged.extend(old[oi:])
        for e in merged:
            chunk = chunker.feed(e)
            if chunk:
                emit(chunk)
    tail = chunker.flush()
    if tail:
        emit(tail)

    new_count = root.entry_count + len(updates) - replaced
    return TreeRoot(_build_levels(store, items, 1, cfg), new_count)


def lookup(root: TreeRoot, key: bytes, store=None) -> tuple[Entry | None, list[PosNode]]:
    """Search for key; returns (entry-or-None, root-to-leaf node path).

    An absent key still yields the boundary path to the leaf that would
    contain it, which is what proof generation needs.
    """
    if root.entry_count == 0:
        return None, []
    node = _load_node(store, root.root_hash)
    path = [node]
    while node.level > 0:
        keys = [e.key for e in node.entries]
        idx = bisect.bisect_right(keys, key) - 1
        if idx < 0:
            idx = 0  # key precedes the whole tree: boundary path via first child
        node = _load_node(store, node.entries[idx].value)
        path.append(node)
    keys = [e.key for e in node.entries]
    idx = bisect.bisect_left(keys, key)
    if idx < len(keys) and keys[idx] == key:
        return node.entries[idx], path
    return None, path


def iter_leaves(root: TreeRoot, store=None):
    """Yield leaf nodes left to right."""
    if root.entry_count == 0:
        return
    for _, leaf_hash in _collect_leaf_refs(store, root.root_hash):
        yield _load_node(store, leaf_hash)


def iter_entries(root: TreeRoot, store=None):
    for leaf in iter_leaves(root, store):
        yield from leaf.entries


def tree_height(root: TreeRoot, store=None) -> int:
    """Number of nodes on a root-to-leaf path (0 for the empty tree)."""
    if root.entry_count == 0:
        return 0
    return _load_node(store, root.root_hash).level + 1
