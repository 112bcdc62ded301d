"""Simplified permissioned ledger: endorse, order, validate, commit.

Peers, the orderer, and clients are in-process actors. The module keeps the
execute-order-validate semantics (deterministic endorsement, single-orderer
total ordering, MVCC validation, hash-chained blocks) without any networking.
"""

from .chain import Block, verify_chain
from .codec import canonical_bytes, position_from_mm, position_to_mm, sha256
from .contracts import ContractError, PathHistoryContract, RoleAllocationContract
from .identity import Identity, IdentityRegistry
from .network import EndorsementPolicy, LedgerError, LedgerNetwork, Proposal
from .state import ReadWriteSet, WorldState

__all__ = [
    "Block",
    "ContractError",
    "EndorsementPolicy",
    "Identity",
    "IdentityRegistry",
    "LedgerError",
    "LedgerNetwork",
    "PathHistoryContract",
    "Proposal",
    "ReadWriteSet",
    "RoleAllocationContract",
    "WorldState",
    "canonical_bytes",
    "position_from_mm",
    "position_to_mm",
    "sha256",
    "verify_chain",
]
