import random

import pytest

from glassledger.postree import Entry
from glassledger.store import MemoryNodeStore


@pytest.fixture
def store():
    return MemoryNodeStore()


def make_entries(n, seed=0, key_width=8, value_width=12):
    """Distinct sorted entries with pseudo-random keys and values."""
    rng = random.Random(seed)
    keys = set()
    while len(keys) < n:
        keys.add(rng.randbytes(key_width))
    return [Entry(k, rng.randbytes(value_width)) for k in sorted(keys)]
