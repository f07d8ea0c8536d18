"""Cryptographic and pattern hashes.

Node identity and the ledger digest use BLAKE2b-256. Chunk boundaries use a
much cheaper polynomial fingerprint (base-256 Rabin style, modulus 2^61 - 1)
evaluated over one serialized entry at a time.
"""

import hashlib

HASH_SIZE = 32

# Mersenne prime keeps the fingerprint a true polynomial hash while letting
# Python evaluate it as a single bigint reduction.
PATTERN_MODULUS = (1 << 61) - 1


def blake2b256(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=HASH_SIZE).digest()


EMPTY_HASH = blake2b256(b"")


def pattern_fingerprint(data: bytes) -> int:
    """Polynomial fingerprint of `data`: sum(b_i * 256^(n-1-i)) mod 2^61-1."""
    return int.from_bytes(data, "big") % PATTERN_MODULUS
