"""Block formation, versioned reads, and ledger reopen behaviour."""

import random

import pytest

from glassledger import postree
from glassledger.errors import InvalidInput, NotFound
from glassledger.hashing import EMPTY_HASH
from glassledger.ledger import (
    DataBlock,
    LedgerStore,
    WriteBatch,
    block_key,
    decode_value,
)
from glassledger.postree import ChunkConfig, Entry, TreeRoot


def batch(*writes):
    return WriteBatch([(k, v, t) for k, v, t in writes])


def test_first_block_on_empty_ledger():
    ld = LedgerStore.in_memory()
    block, digest = ld.append_block(batch((b"k", b"v", b"t1")), now=1000)
    assert block.block_no == 1
    assert digest.block_no == 1
    assert digest.digest != EMPTY_HASH
    assert ld.digest() == digest


def test_two_version_update_produces_next_block():
    ld = LedgerStore.in_memory()
    _, d1 = ld.append_block(batch((b"K9", b"V9-1", b"t1")), now=1000)
    b_prev = ld.block_no
    block2, d2 = ld.append_block(batch((b"K9", b"V9-2", b"t2")), now=2222)
    assert block2.block_no == b_prev + 1
    assert block2.timestamp == 2222
    assert d2.block_no == b_prev + 1
    assert d2.digest != d1.digest
    # both versions remain readable at their blocks
    assert ld.get_versioned(b"K9", at_block=b_prev) == (b"V9-1", b_prev)
    assert ld.get_versioned(b"K9", at_block=b_prev + 1) == (b"V9-2", b_prev + 1)
    # the new leaf's previous-version pointer names the old leaf
    entry, _ = postree.lookup(ld.lower_root, b"K9", ld.store)
    assert entry.prev_hash is not None
    old_state = ld.state_root_at(b_prev)
    old_entry, old_path = postree.lookup(old_state, b"K9", ld.store)
    assert entry.prev_hash == postree.node_hash(old_path[-1])


def test_fifty_sequential_batches_match_map_oracle():
    ld = LedgerStore.in_memory()
    rng = random.Random(5)
    oracle = {}
    for i in range(50):
        k = b"key-%d" % rng.randrange(12)
        v = b"val-%d" % i
        ld.append_block(batch((k, v, b"t%d" % i)), now=i)
        oracle[k] = v
    assert ld.block_no == 50
    for k, v in oracle.items():
        got = ld.get_latest(k)
        assert got is not None and got[0] == v


def test_get_block_roundtrip_and_bounds():
    ld = LedgerStore.in_memory()
    recorded = []
    for i in range(50):
        blk, _ = ld.append_block(batch((b"k%d" % i, b"v", b"t%d" % i)), now=i * 10)
        recorded.append(blk)
    for i, want in enumerate(recorded, start=1):
        got, path = ld.get_block(i)
        assert got == want
        assert path[0].level == postree.tree_height(ld.upper_root, ld.store) - 1
    latest, _ = ld.get_block(ld.block_no)
    assert latest.state_root == ld.lower_root.root_hash
    with pytest.raises(NotFound):
        ld.get_block(0)
    with pytest.raises(NotFound):
        ld.get_block(51)


def test_versioned_reads_match_per_block_snapshots():
    ld = LedgerStore.in_memory()
    rng = random.Random(9)
    keys = [b"k%d" % i for i in range(8)]
    snapshots = []  # snapshots[b-1] = {key: (value, birth)}
    current = {}
    for b in range(1, 31):
        k = rng.choice(keys)
        v = b"v%d" % b
        ld.append_block(batch((k, v, b"t%d" % b)), now=b * 100)
        current[k] = (v, b)
        snapshots.append(dict(current))
    for _ in range(200):
        b = rng.randrange(1, 31)
        k = rng.choice(keys)
        want = snapshots[b - 1].get(k)
        assert ld.get_versioned(k, at_block=b) == want
    # timestamp resolution picks the greatest block at or before the stamp
    assert ld.get_versioned(keys[0], at_timestamp=50) is None  # before block 1
    assert ld.resolve_timestamp(100) == 1
    assert ld.resolve_timestamp(105) == 1
    assert ld.resolve_timestamp(3000) == 30
    with pytest.raises(InvalidInput):
        ld.get_versioned(keys[0])


def test_version_chain_walks_history_in_reverse():
    ld = LedgerStore.in_memory()
    for i in range(1, 6):
        ld.append_block(batch((b"k", b"v%d" % i, b"t%d" % i)), now=i)
    entry, _ = postree.lookup(ld.lower_root, b"k", ld.store)
    seen = []
    while True:
        birth, value = decode_value(entry.value)
        seen.append(value)
        if entry.prev_hash is None:
            break
        leaf = postree.decode_node(ld.store.get(entry.prev_hash))
        entry = next(e for e in leaf.entries if e.key == b"k")
    assert seen == [b"v5", b"v4", b"v3", b"v2", b"v1"]


def test_upper_tree_digest_is_pure_function_of_previous_plus_block():
    ld = LedgerStore.in_memory()
    for i in range(1, 11):
        ld.append_block(batch((b"k%d" % i, b"v", b"t%d" % i)), now=i)
    # recompute each digest independently from the prior root and the block
    from glassledger.store import MemoryNodeStore

    for b in range(1, 11):
        scratch = MemoryNodeStore()
        prev = postree.EMPTY_ROOT
        for j in range(1, b + 1):
            blk = ld.block(j)
            prev = postree.update(
                prev, [Entry(block_key(j), blk.encode())], ld.cfg, scratch
            )
        assert prev.root_hash == ld.digest_at(b).digest


def test_latest_values_appear_in_last_block_state():
    ld = LedgerStore.in_memory()
    rng = random.Random(3)
    latest = {}
    for i in range(40):
        k = b"k%d" % rng.randrange(10)
        v = b"v%d" % i
        ld.append_block(batch((k, v, b"t%d" % i)), now=i)
        latest[k] = v
    tip_state = ld.state_root_at(ld.block_no)
    for k, v in latest.items():
        entry, _ = postree.lookup(tip_state, k, ld.store)
        assert decode_value(entry.value)[1] == v


def test_reopen_restores_tip_and_reuses_blocks(tmp_path):
    ld = LedgerStore.open(tmp_path)
    digests = []
    for i in range(1, 13):
        _, d = ld.append_block(batch((b"k%d" % (i % 4), b"v%d" % i, b"t%d" % i)), now=i)
        digests.append(d)
    want_digest = ld.digest()
    want_count = ld.lower_root.entry_count
    ld.close()

    ld2 = LedgerStore.open(tmp_path)
    assert ld2.digest() == want_digest
    assert ld2.block_no == 12
    assert ld2.report.reused_blocks == 12
    assert ld2.lower_root.entry_count == want_count
    for b, d in enumerate(digests, start=1):
        assert ld2.digest_at(b) == d
    # appends continue seamlessly
    _, d13 = ld2.append_block(batch((b"new", b"x", b"t13")), now=99)
    assert d13.block_no == 13
    ld2.close()


def test_reopen_ignores_torn_block_map_tail(tmp_path):
    ld = LedgerStore.open(tmp_path)
    for i in range(1, 5):
        ld.append_block(batch((b"k%d" % i, b"v", b"t%d" % i)), now=i)
    d4 = ld.digest()
    ld.close()

    with open(tmp_path / "blocks.map", "ab") as f:
        f.write(b"\x00" * 11)  # torn record

    ld2 = LedgerStore.open(tmp_path)
    assert ld2.report.truncated_block_map
    assert ld2.block_no == 4
    assert ld2.digest() == d4
    ld2.close()


def test_duplicate_batch_keys_rejected():
    with pytest.raises(InvalidInput):
        WriteBatch([(b"k", b"1", b"t"), (b"k", b"2", b"t")])


def test_block_encode_roundtrip():
    blk = DataBlock(7, 123456, (b"tid-a", b"tid-b"), b"\x11" * 32)
    assert DataBlock.decode(blk.encode()) == blk
