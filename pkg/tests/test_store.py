import pytest

from glassledger.errors import CorruptTree
from glassledger.store import FileNodeStore, MemoryNodeStore


def test_put_is_idempotent_and_counts_new_writes():
    s = MemoryNodeStore()
    h1 = s.put(b"hello")
    h2 = s.put(b"hello")
    assert h1 == h2
    assert s.write_count == 1
    assert s.get(h1) == b"hello"


def test_missing_hash_raises():
    s = MemoryNodeStore()
    with pytest.raises(CorruptTree):
        s.get(b"\x00" * 32)


def test_file_store_survives_reopen(tmp_path):
    path = tmp_path / "nodes.dat"
    s = FileNodeStore(path)
    hashes = [s.put(bytes([i]) * 40) for i in range(20)]
    s.close()

    s2 = FileNodeStore(path)
    for i, h in enumerate(hashes):
        assert s2.get(h) == bytes([i]) * 40
    assert len(s2) == 20
    s2.close()


def test_file_store_truncates_torn_tail(tmp_path):
    path = tmp_path / "nodes.dat"
    s = FileNodeStore(path)
    h = s.put(b"complete record")
    s.close()

    with open(path, "ab") as f:
        f.write(b"\xde\xad\xbe\xef" * 3)  # garbage shorter than a record header

    s2 = FileNodeStore(path)
    assert s2.get(h) == b"complete record"
    assert len(s2) == 1
    # the store is usable for new appends after truncation
    h2 = s2.put(b"after recovery")
    s2.close()
    s3 = FileNodeStore(path)
    assert s3.get(h2) == b"after recovery"
    s3.close()
