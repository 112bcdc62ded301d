"""Hash-chained blocks and their newline-delimited JSON export.

A block's hash covers its number, the previous hash, the genesis config (null
past block 0) and every byte of every transaction, so any single-bit mutation
of an exported chain breaks either a hash or the prev_hash link.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .codec import canonical_bytes, sha256
from .state import ReadWriteSet

GENESIS_PREV_HASH = bytes(32)


class ChainIntegrityError(Exception):
    def __init__(self, block_number, reason):
        super().__init__(f"block {block_number}: {reason}")
        self.block_number = block_number
        self.reason = reason


@dataclass(frozen=True)
class Transaction:
    proposal: dict                # canonical proposal payload
    rwset: ReadWriteSet
    endorsements: tuple           # of {"org": str, "peer": str, "sig": bytes}

    def to_payload(self) -> dict:
        return {
            "proposal": self.proposal,
            "rwset": self.rwset.to_payload(),
            "endorsements": [
                {"org": e["org"], "peer": e["peer"], "sig": e["sig"]}
                for e in self.endorsements
            ],
        }


@dataclass(frozen=True)
class Block:
    number: int
    prev_hash: bytes
    transactions: tuple           # of Transaction
    config: dict | None = None    # genesis only
    hash: bytes = b""

    @staticmethod
    def content_hash(number, prev_hash, transactions, config) -> bytes:
        payload = {
            "number": number,
            "prev_hash": prev_hash,
            "config": config,
            "transactions": [tx.to_payload() for tx in transactions],
        }
        return sha256(canonical_bytes(payload))

    @classmethod
    def create(cls, number, prev_hash, transactions, config=None) -> "Block":
        transactions = tuple(transactions)
        return cls(
            number=number,
            prev_hash=prev_hash,
            transactions=transactions,
            config=config,
            hash=cls.content_hash(number, prev_hash, transactions, config),
        )


def verify_chain(blocks) -> int:
    """Recompute every hash and link; returns the number of verified blocks."""
    if not blocks:
        raise ChainIntegrityError(0, "empty chain")
    prev = None
    for block in blocks:
        if prev is None:
            if block.number != 0:
                raise ChainIntegrityError(block.number, "chain does not start at block 0")
            if block.prev_hash != GENESIS_PREV_HASH:
                raise ChainIntegrityError(0, "genesis prev_hash is not all zeroes")
        else:
            if block.number != prev.number + 1:
                raise ChainIntegrityError(block.number, "non-consecutive block number")
            if block.prev_hash != prev.hash:
                raise ChainIntegrityError(block.number, "prev_hash does not match previous block")
        expected = Block.content_hash(
            block.number, block.prev_hash, block.transactions, block.config
        )
        if block.hash != expected:
            raise ChainIntegrityError(block.number, "block hash does not match content")
        prev = block
    return len(blocks)


def _tx_to_json(tx: Transaction) -> dict:
    return {
        "proposal": tx.proposal,
        "rwset": {
            "reads": [
                {"key": k, "version": None if v is None else [v[0], v[1]]}
                for k, v in tx.rwset.reads
            ],
            "writes": [{"key": k, "value": val.hex()} for k, val in tx.rwset.writes],
        },
        "endorsements": [
            {"org": e["org"], "peer": e["peer"], "sig": e["sig"].hex()}
            for e in tx.endorsements
        ],
    }


def _tx_from_json(obj: dict) -> Transaction:
    rwset = ReadWriteSet(
        reads=tuple(
            (r["key"], None if r["version"] is None else (r["version"][0], r["version"][1]))
            for r in obj["rwset"]["reads"]
        ),
        writes=tuple((w["key"], bytes.fromhex(w["value"])) for w in obj["rwset"]["writes"]),
    )
    endorsements = tuple(
        {"org": e["org"], "peer": e["peer"], "sig": bytes.fromhex(e["sig"])}
        for e in obj["endorsements"]
    )
    return Transaction(proposal=obj["proposal"], rwset=rwset, endorsements=endorsements)


def block_to_json(block: Block) -> str:
    return json.dumps(
        {
            "number": block.number,
            "prev_hash": block.prev_hash.hex(),
            "hash": block.hash.hex(),
            "config": block.config,
            "transactions": [_tx_to_json(tx) for tx in block.transactions],
        },
        sort_keys=True,
        separators=(",", ":"),
    )


def block_from_json(line: str) -> Block:
    obj = json.loads(line)
    return Block(
        number=obj["number"],
        prev_hash=bytes.fromhex(obj["prev_hash"]),
        transactions=tuple(_tx_from_json(t) for t in obj["transactions"]),
        config=obj["config"],
        hash=bytes.fromhex(obj["hash"]),
    )


def write_ndjson(blocks, path):
    with open(path, "w", encoding="utf-8") as fh:
        for block in blocks:
            fh.write(block_to_json(block) + "\n")


def read_ndjson(path):
    blocks = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                blocks.append(block_from_json(line))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ChainIntegrityError(lineno, f"unparseable block line: {exc}") from exc
    return blocks
