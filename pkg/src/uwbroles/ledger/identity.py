"""Organization/peer identities with deterministic Ed25519 keys.

Key material is derived from a scenario seed so a re-run of the same scenario
produces a byte-identical ledger export. Ed25519 signing itself is
deterministic, which the export determinism also relies on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric import ed25519

from .codec import canonical_bytes


@dataclass
class Identity:
    org_id: str
    peer_id: str
    _signing_key: ed25519.Ed25519PrivateKey

    @classmethod
    def derive(cls, org_id: str, peer_id: str, seed: int) -> "Identity":
        material = hashlib.sha256(
            canonical_bytes({"org": org_id, "peer": peer_id, "seed": seed})
        ).digest()
        return cls(org_id=org_id, peer_id=peer_id,
                   _signing_key=ed25519.Ed25519PrivateKey.from_private_bytes(material))

    @property
    def verification_key(self) -> bytes:
        return self._signing_key.public_key().public_bytes_raw()

    def sign(self, payload) -> bytes:
        return self._signing_key.sign(canonical_bytes(payload))


@dataclass
class IdentityRegistry:
    """(org, peer) -> verification key; the trust root shipped in the genesis config."""

    keys: dict = field(default_factory=dict)

    def register(self, identity: Identity):
        self.keys[(identity.org_id, identity.peer_id)] = identity.verification_key

    def register_raw(self, org_id: str, peer_id: str, verification_key: bytes):
        self.keys[(org_id, peer_id)] = verification_key

    def verify(self, org_id: str, peer_id: str, payload, signature: bytes) -> bool:
        key = self.keys.get((org_id, peer_id))
        if key is None:
            return False
        try:
            ed25519.Ed25519PublicKey.from_public_bytes(key).verify(
                signature, canonical_bytes(payload)
            )
            return True
        except InvalidSignature:
            return False

    def to_config(self) -> list:
        return [
            {"org": org, "peer": peer, "key": key.hex()}
            for (org, peer), key in sorted(self.keys.items())
        ]

    @classmethod
    def from_config(cls, entries) -> "IdentityRegistry":
        reg = cls()
        for e in entries:
            reg.register_raw(e["org"], e["peer"], bytes.fromhex(e["key"]))
        return reg
