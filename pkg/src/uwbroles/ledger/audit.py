"""Offline chain audit: verify an exported ledger and replay it.

Replays re-run the commit pipeline from genesis: hash chain, endorsement
signatures against the keys shipped in the genesis config, endorsement
policy, then MVCC validation. The reconstructed world state and role history
must match what the live network held, or the export was tampered with.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .chain import Block, ChainIntegrityError, read_ndjson, verify_chain
from .codec import canonical_decode
from .identity import IdentityRegistry
from .state import WorldState


@dataclass
class AuditReport:
    blocks: int = 0
    transactions: int = 0
    valid_transactions: int = 0
    state: WorldState = field(default_factory=WorldState)
    role_history: list = field(default_factory=list)   # (epoch, active ids, passive ids)
    path_points: int = 0

    def state_digest(self) -> tuple:
        return self.state.digest_items()


def replay(blocks) -> AuditReport:
    """Full audit of a block list; raises ChainIntegrityError on any violation."""
    verify_chain(blocks)
    genesis = blocks[0]
    if genesis.config is None:
        raise ChainIntegrityError(0, "genesis block carries no channel config")
    registry = IdentityRegistry.from_config(genesis.config["orgs"])
    required = int(genesis.config["policy"]["required"])

    report = AuditReport(blocks=len(blocks))
    for block in blocks:
        for tx_no, tx in enumerate(block.transactions):
            report.transactions += 1
            orgs = {e["org"] for e in tx.endorsements}
            if len(orgs) < required:
                raise ChainIntegrityError(
                    block.number, f"tx {tx_no} carries {len(orgs)} endorsing orgs, policy needs {required}"
                )
            payload = {"proposal": tx.proposal, "rwset": tx.rwset.to_payload()}
            for e in tx.endorsements:
                if not registry.verify(e["org"], e["peer"], payload, e["sig"]):
                    raise ChainIntegrityError(
                        block.number, f"tx {tx_no} endorsement signature from {e['peer']} does not verify"
                    )
            if report.state.validate(tx.rwset):
                report.state.apply(tx.rwset, block.number, tx_no)
                report.valid_transactions += 1
                for key, value in tx.rwset.writes:
                    if key.startswith("roles/"):
                        decoded = canonical_decode(value)
                        report.role_history.append(
                            (decoded["epoch"], tuple(decoded["active"]), tuple(decoded["passive"]))
                        )
                    elif key.startswith("path/"):
                        report.path_points += 1
    report.role_history.sort(key=lambda item: item[0])
    return report


def audit_export(path) -> AuditReport:
    return replay(read_ndjson(path))
