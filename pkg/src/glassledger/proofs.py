"""Inclusion, current-value, and append-only proofs.

Generation walks the two trees and ships raw node bytes; verification is a
pure function that re-hashes those bytes bottom-up and compares against the
digest the verifier already trusts. Nothing in here consults the server.

Wire layout is documented in PROOFS.md. Design points that matter for
soundness:

* every encoded field is either hashed, compared against a caller-supplied
  expectation, or structurally validated -- there are no inert bytes;
* decoding is strict: truncated input, trailing bytes, or out-of-range
  indices all fail closed (verdict 0);
* batched proofs share the block-tree path, the data block, and a
  deduplicated state-tree node table across keys.

The append-only check reconstructs the old tree's root from the new tree's
path to the old frontier block: at each level the old node must be an entry
prefix of the corresponding new node. A shorter old tree appears as a stack
of single-entry reconstructions at the top, which are skipped when matching
the old digest.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

from .codec import Reader, lp, u8, u32, u64
from .errors import LedgerError, NotFound, OutOfRange, WireError
from .hashing import EMPTY_HASH, HASH_SIZE, blake2b256
from .ledger import DataBlock, LedgerDigest, block_key, decode_value
from .postree import PosNode, TreeRoot, decode_node, lookup, encode_node

PROOF_VERSION = 1
KIND_INCLUSION = 1
KIND_CURRENT = 2
KIND_APPEND = 3


@dataclass(frozen=True)
class ProofItem:
    key: bytes
    path: tuple[int, ...]  # indices into the shared lower node table
    value: bytes  # raw value, envelope stripped
    birth_block: int


@dataclass(frozen=True)
class InclusionProof:
    kind: int  # KIND_INCLUSION or KIND_CURRENT
    block_no: int
    upper_nodes: tuple[bytes, ...]  # root-to-leaf raw node bytes
    lower_table: tuple[bytes, ...]  # deduplicated raw node bytes
    items: tuple[ProofItem, ...]

    @property
    def node_count(self) -> int:
        return len(self.upper_nodes) + len(self.lower_table)

    @property
    def data_block(self) -> DataBlock:
        leaf = decode_node(self.upper_nodes[-1])
        for e in leaf.entries:
            if e.key == block_key(self.block_no):
                return DataBlock.decode(e.value)
        raise NotFound("block entry missing from proof leaf")

    def proven(self) -> list[tuple[bytes, bytes, int]]:
        return [(i.key, i.value, i.birth_block) for i in self.items]

    def encode(self) -> bytes:
        parts = [u8(PROOF_VERSION), u8(self.kind), u64(self.block_no)]
        parts.append(u32(len(self.upper_nodes)))
        parts.extend(lp(n) for n in self.upper_nodes)
        parts.append(u32(len(self.lower_table)))
        parts.extend(lp(n) for n in self.lower_table)
        parts.append(u32(len(self.items)))
        for it in self.items:
            parts.append(lp(it.key))
            parts.append(u32(len(it.path)))
            parts.extend(u32(i) for i in it.path)
            parts.append(lp(it.value))
            parts.append(u64(it.birth_block))
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "InclusionProof":
        r = Reader(data)
        if r.u8() != PROOF_VERSION:
            raise WireError("unknown proof version")
        kind = r.u8()
        if kind not in (KIND_INCLUSION, KIND_CURRENT):
            raise WireError("not an inclusion proof")
        block_no = r.u64()
        upper = tuple(r.lp() for _ in range(r.u32()))
        table = tuple(r.lp() for _ in range(r.u32()))
        items = []
        for _ in range(r.u32()):
            key = r.lp()
            path = tuple(r.u32() for _ in range(r.u32()))
            value = r.lp()
            birth = r.u64()
            items.append(ProofItem(key, path, value, birth))
        r.done()
        return cls(kind, block_no, upper, table, tuple(items))


@dataclass(frozen=True)
class AppendOnlyProof:
    old: LedgerDigest
    new: LedgerDigest
    frontier_nodes: tuple[bytes, ...]  # new tree's root-to-frontier-leaf path

    @property
    def node_count(self) -> int:
        return len(self.frontier_nodes)

    def encode(self) -> bytes:
        parts = [
            u8(PROOF_VERSION),
            u8(KIND_APPEND),
            self.old.digest,
            u64(self.old.block_no),
            self.new.digest,
            u64(self.new.block_no),
            u32(len(self.frontier_nodes)),
        ]
        parts.extend(lp(n) for n in self.frontier_nodes)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "AppendOnlyProof":
        r = Reader(data)
        if r.u8() != PROOF_VERSION:
            raise WireError("unknown proof version")
        if r.u8() != KIND_APPEND:
            raise WireError("not an append-only proof")
        old = LedgerDigest(r.raw(HASH_SIZE), r.u64())
        new = LedgerDigest(r.raw(HASH_SIZE), r.u64())
        nodes = tuple(r.lp() for _ in range(r.u32()))
        r.done()
        return cls(old, new, nodes)


# ------------------------------------------------------------------ helpers


def _route_index(node: PosNode, key: bytes) -> int:
    """Index of the child an honest lookup would follow for `key`."""
    keys = [e.key for e in node.entries]
    idx = bisect.bisect_right(keys, key) - 1
    return max(idx, 0)


def _path_to_leaf(ledger, root: TreeRoot, key: bytes):
    entry, path = lookup(root, key, ledger.store)
    return entry, path


def _raw_path(ledger, path: list[PosNode]) -> list[bytes]:
    return [encode_node(n) for n in path]


# --------------------------------------------------------------- generation


def prove_inclusion(
    ledger, digest: LedgerDigest, block_no: int, keys: list[bytes], kind: int = KIND_INCLUSION
) -> InclusionProof:
    """Batched proof that each key held its value in the state of `block_no`,
    anchored at `digest` (which may be older than the ledger tip)."""
    if not ledger.has_digest(digest):
        raise NotFound("digest unknown to this ledger")
    if not (1 <= block_no <= digest.block_no):
        raise OutOfRange(f"block {block_no} not covered by digest")

    upper_root = TreeRoot(digest.digest, 1)
    blk_entry, upper_path = _path_to_leaf(ledger, upper_root, block_key(block_no))
    if blk_entry is None:
        raise NotFound(f"block {block_no} missing under digest")
    block = DataBlock.decode(blk_entry.value)

    state_root = TreeRoot(block.state_root, 0 if block.state_root == EMPTY_HASH else 1)
    table: list[bytes] = []
    index_of: dict[bytes, int] = {}
    items = []
    for key in sorted(set(keys)):
        entry, path = _path_to_leaf(ledger, state_root, key)
        if entry is None:
            raise NotFound(f"key {key!r} absent at block {block_no}")
        idxs = []
        for node in path:
            raw = encode_node(node)
            h = blake2b256(raw)
            if h not in index_of:
                index_of[h] = len(table)
                table.append(raw)
            idxs.append(index_of[h])
        birth, value = decode_value(entry.value)
        items.append(ProofItem(key, tuple(idxs), value, birth))

    return InclusionProof(
        kind, block_no, tuple(_raw_path(ledger, upper_path)), tuple(table), tuple(items)
    )


def prove_current(ledger, digest: LedgerDigest, keys: list[bytes]) -> InclusionProof:
    """Current-value proof: inclusion against the digest's own block."""
    return prove_inclusion(ledger, digest, digest.block_no, keys, kind=KIND_CURRENT)


def prove_append(ledger, old: LedgerDigest, new: LedgerDigest) -> AppendOnlyProof:
    """Proof that the ledger at `old` is a prefix of the ledger at `new`."""
    for d in (old, new):
        if not ledger.has_digest(d):
            raise NotFound("digest unknown to this ledger")
    if old.block_no > new.block_no:
        raise OutOfRange("old digest is newer than new digest")
    if old == new or old.block_no == 0:
        return AppendOnlyProof(old, new, ())
    new_root = TreeRoot(new.digest, 1)
    entry, path = _path_to_leaf(ledger, new_root, block_key(old.block_no))
    if entry is None:
        raise NotFound("frontier block missing under new digest")
    return AppendOnlyProof(old, new, tuple(_raw_path(ledger, path)))


# ------------------------------------------------------------- verification


def _verify_chain(raw_nodes: tuple[bytes, ...], target_key: bytes, root_hash: bytes):
    """Check a root-to-leaf node chain: hashes link, levels descend, and the
    route at every index node is the honest lookup route for target_key.
    Returns the decoded leaf."""
    if not raw_nodes:
        raise WireError("empty node path")
    if blake2b256(raw_nodes[0]) != root_hash:
        raise WireError("path root does not match digest")
    nodes = [decode_node(raw) for raw in raw_nodes]
    for parent, child, raw_child in zip(nodes, nodes[1:], raw_nodes[1:]):
        if parent.level != child.level + 1:
            raise WireError("path levels do not descend")
        idx = _route_index(parent, target_key)
        if parent.entries[idx].value != blake2b256(raw_child):
            raise WireError("hash chain broken")
    if nodes[-1].level != 0:
        raise WireError("path does not end at a leaf")
    return nodes[-1]


def _leaf_entry(leaf: PosNode, key: bytes):
    for e in leaf.entries:
        if e.key == key:
            return e
    raise WireError("key missing from proof leaf")


def verify_inclusion(
    proof: InclusionProof,
    digest: LedgerDigest,
    expected: dict[bytes, bytes],
    expected_birth: dict[bytes, int] | None = None,
) -> int:
    """1 iff the proof binds exactly the expected key/value pairs to `digest`.

    For current-value proofs the proven block must be the digest's own block.
    `expected_birth` additionally pins the block that wrote each key.
    Malformed input never raises; it returns 0.
    """
    try:
        if proof.kind == KIND_CURRENT and proof.block_no != digest.block_no:
            return 0
        if not (1 <= proof.block_no <= digest.block_no):
            return 0

        bkey = block_key(proof.block_no)
        upper_leaf = _verify_chain(proof.upper_nodes, bkey, digest.digest)
        block = DataBlock.decode(_leaf_entry(upper_leaf, bkey).value)
        if block.block_no != proof.block_no:
            return 0

        if {i.key for i in proof.items} != set(expected):
            return 0
        table_hashes = [blake2b256(raw) for raw in proof.lower_table]
        for item in proof.items:
            raws = tuple(proof.lower_table[i] for i in item.path)
            leaf = _verify_chain(raws, item.key, block.state_root)
            birth, value = decode_value(_leaf_entry(leaf, item.key).value)
            if value != item.value or birth != item.birth_block:
                return 0
            if expected[item.key] != value:
                return 0
            if expected_birth is not None and expected_birth.get(item.key) not in (
                None,
                birth,
            ):
                return 0
        # every table slot must be referenced: padding nodes are not allowed
        used = {i for item in proof.items for i in item.path}
        if used != set(range(len(table_hashes))):
            return 0
        return 1
    except (LedgerError, IndexError, ValueError):
        return 0


def verify_append(proof: AppendOnlyProof, old: LedgerDigest, new: LedgerDigest) -> int:
    """1 iff the history committed by `old` is a prefix of that of `new`."""
    try:
        if proof.old != old or proof.new != new:
            return 0
        if old.block_no > new.block_no:
            return 0
        if old == new:
            return 1 if not proof.frontier_nodes else 0
        if old.block_no == 0:
            # genesis is a prefix of everything, but only the genesis digest
            return 1 if old.digest == EMPTY_HASH and not proof.frontier_nodes else 0
        if old.block_no == new.block_no:
            return 0  # same length, different digests: not a prefix

        frontier = block_key(old.block_no)
        leaf = _verify_chain(proof.frontier_nodes, frontier, new.digest)
        nodes = [decode_node(raw) for raw in proof.frontier_nodes]

        # reconstruct the old tree's nodes along the path, bottom-up
        old_entries = tuple(e for e in leaf.entries if e.key <= frontier)
        if not old_entries or old_entries[-1].key != frontier:
            return 0
        recon = PosNode(0, old_entries)
        recon_hash = blake2b256(encode_node(recon))
        recon_entry_counts = [len(old_entries)]
        recon_hashes = [recon_hash]
        for parent in reversed(nodes[:-1]):
            idx = _route_index(parent, frontier)
            kept = parent.entries[:idx] + (
                type(parent.entries[idx])(parent.entries[idx].key, recon_hash, None),
            )
            recon = PosNode(parent.level, kept)
            recon_hash = blake2b256(encode_node(recon))
            recon_entry_counts.append(len(kept))
            recon_hashes.append(recon_hash)

        # recon_hashes[i] is the reconstruction at depth len-1-i from the
        # root. A shorter old tree shows up as single-entry reconstructions
        # at the top; any level below such a run is a valid old root.
        depth = len(recon_hashes)
        for i in range(depth - 1, -1, -1):
            # levels above i must all be single-entry to collapse
            if all(recon_entry_counts[j] == 1 for j in range(i + 1, depth)):
                if recon_hashes[i] == old.digest:
                    # leaf-level roots must absorb the whole path
                    return 1
        return 0
    except (LedgerError, IndexError, ValueError):
        return 0
