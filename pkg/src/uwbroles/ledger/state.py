"""Versioned key-value world state with MVCC validation.

Each committed write stamps its key with the (block, tx) version that wrote
it. A transaction is valid at commit time iff every key it read is still at
the version it read during endorsement; stale reads invalidate the whole
transaction. Replaying the same blocks therefore reproduces the same state on
every peer.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class ReadWriteSet:
    """Simulated effects of one contract execution.

    reads:  tuple of (key, version) where version is (block_no, tx_no) or None
            for a key that did not exist at endorsement time.
    writes: tuple of (key, value bytes).
    """

    reads: tuple
    writes: tuple

    def __post_init__(self):
        read_keys = [k for k, _ in self.reads]
        write_keys = [k for k, _ in self.writes]
        if len(set(read_keys)) != len(read_keys):
            raise ValueError("duplicate keys in read set")
        if len(set(write_keys)) != len(write_keys):
            raise ValueError("duplicate keys in write set")

    def to_payload(self) -> dict:
        return {
            "reads": [
                {"key": k, "version": None if v is None else [v[0], v[1]]}
                for k, v in self.reads
            ],
            "writes": [{"key": k, "value": val} for k, val in self.writes],
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ReadWriteSet":
        reads = tuple(
            (r["key"], None if r["version"] is None else (r["version"][0], r["version"][1]))
            for r in payload["reads"]
        )
        writes = tuple((w["key"], w["value"]) for w in payload["writes"])
        return cls(reads=reads, writes=writes)


@dataclass
class WorldState:
    """Current key -> (value, version) map derived from all valid transactions."""

    entries: dict = field(default_factory=dict)

    def get(self, key: str):
        entry = self.entries.get(key)
        return None if entry is None else entry[0]

    def version(self, key: str):
        entry = self.entries.get(key)
        return None if entry is None else entry[1]

    def keys_with_prefix(self, prefix: str) -> list:
        return sorted(k for k in self.entries if k.startswith(prefix))

    def apply(self, rwset: ReadWriteSet, block_no: int, tx_no: int):
        for key, value in rwset.writes:
            self.entries[key] = (value, (block_no, tx_no))

    def validate(self, rwset: ReadWriteSet) -> bool:
        """MVCC check: every read version must still match committed state."""
        return all(self.version(key) == version for key, version in rwset.reads)

    def copy(self) -> "WorldState":
        return WorldState(entries=dict(self.entries))

    def digest_items(self) -> tuple:
        return tuple(sorted(self.entries.items()))
