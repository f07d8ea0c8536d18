"""Exception types shared across the ledger stack."""


class LedgerError(Exception):
    """Base class for all glassledger errors."""


class InvalidInput(LedgerError):
    """Caller passed malformed data (unsorted keys, duplicates, bad frame)."""


class StorageError(LedgerError):
    """A write to the node store, WAL, or block map failed."""


class NotFound(LedgerError):
    """Requested key, block, digest, or transaction does not exist."""


class OutOfRange(LedgerError):
    """Block number lies outside the ledger's committed range."""


class CorruptTree(LedgerError):
    """An index node references a hash that is missing from the store."""


class NotYetPersisted(LedgerError):
    """Proof requested for a block the persister has not written yet."""


class TxnAborted(LedgerError):
    """Two-phase commit ended in a global abort."""

    def __init__(self, msg: str, shard: int | None = None):
        super().__init__(msg)
        self.shard = shard


class TxnUnknown(LedgerError):
    """Coordinator exhausted retries; the transaction outcome is undecided."""


class TamperDetected(LedgerError):
    """A proof failed verification. `evidence` carries the failing material."""

    def __init__(self, msg: str, evidence=None):
        super().__init__(msg)
        self.evidence = evidence


class WireError(LedgerError):
    """Malformed frame or message payload."""
