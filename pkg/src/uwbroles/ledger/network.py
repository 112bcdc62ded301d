"""Execute-order-validate flow over in-process actors.

One peer per organization plus a single orderer. A client invocation runs the
Fabric-style pipeline: endorse on enough peers (deterministic contract
execution against each peer's committed snapshot), check the endorsement
policy and byte-equality of the read/write sets, hand the transaction to the
orderer, cut a block, then let every peer MVCC-validate and commit it.

Two drive modes produce identical chains for the same input sequence:
synchronous (everything inline, used by deterministic scenario runs) and
threaded (queue-connected actor threads, used for latency measurements).
"""

from __future__ import annotations

import itertools
import queue
import threading
from dataclasses import dataclass, field

from .chain import Block, Transaction, verify_chain, GENESIS_PREV_HASH
from .codec import canonical_bytes, sha256
from .contracts import ContractError, PathHistoryContract, RoleAllocationContract, TxContext
from .identity import Identity, IdentityRegistry
from .state import WorldState

BLOCK_CUT_SIZE = 10
BLOCK_CUT_TIMEOUT_S = 0.05


class LedgerError(Exception):
    """Rejection anywhere on the endorse/order/validate path."""


@dataclass(frozen=True)
class EndorsementPolicy:
    required: int

    def __post_init__(self):
        if self.required < 1:
            raise ValueError("policy must require at least one endorsement")


@dataclass(frozen=True)
class Proposal:
    contract_id: str
    function: str
    args: dict
    submitter_org: str
    submitter_peer: str
    nonce: int

    def payload(self) -> dict:
        return {
            "contract": self.contract_id,
            "function": self.function,
            "args": self.args,
            "submitter": {"org": self.submitter_org, "peer": self.submitter_peer},
            "nonce": self.nonce,
        }

    def tx_id(self) -> str:
        return sha256(canonical_bytes(self.payload())).hex()


@dataclass(frozen=True)
class Endorsement:
    org: str
    peer: str
    rwset: object
    response: dict | None
    signature: bytes


class PeerNode:
    """One endorsing/committing peer: identity, chain copy, world state."""

    def __init__(self, identity: Identity, contracts, approved=None):
        self.identity = identity
        self.contracts = {c.contract_id: c for c in contracts}
        self.approved = set(self.contracts if approved is None else approved)
        self.state = WorldState()
        self.chain = []

    def endorse(self, proposal: Proposal) -> Endorsement:
        """Simulate the transaction; no state mutation happens here."""
        if proposal.contract_id not in self.contracts:
            raise LedgerError(f"peer {self.identity.peer_id}: unknown contract {proposal.contract_id!r}")
        if proposal.contract_id not in self.approved:
            raise LedgerError(
                f"peer {self.identity.peer_id}: contract {proposal.contract_id!r} not approved by {self.identity.org_id}"
            )
        ctx = TxContext(self.state, submitter_org=proposal.submitter_org)
        response = self.contracts[proposal.contract_id].execute(
            ctx, proposal.function, proposal.args
        )
        rwset = ctx.rwset()
        signature = self.identity.sign(
            {"proposal": proposal.payload(), "rwset": rwset.to_payload()}
        )
        return Endorsement(
            org=self.identity.org_id,
            peer=self.identity.peer_id,
            rwset=rwset,
            response=response,
            signature=signature,
        )

    def validate_and_commit(self, block: Block) -> list:
        """MVCC-validate each transaction in order; apply only the valid ones."""
        if self.chain:
            last = self.chain[-1]
            if block.number != last.number + 1 or block.prev_hash != last.hash:
                raise LedgerError(
                    f"peer {self.identity.peer_id}: block {block.number} does not chain onto {last.number}"
                )
        else:
            if block.number != 0 or block.prev_hash != GENESIS_PREV_HASH:
                raise LedgerError(f"peer {self.identity.peer_id}: bad genesis block")
        expected = Block.content_hash(block.number, block.prev_hash, block.transactions, block.config)
        if expected != block.hash:
            raise LedgerError(f"peer {self.identity.peer_id}: block {block.number} hash mismatch")

        flags = []
        for tx_no, tx in enumerate(block.transactions):
            valid = self.state.validate(tx.rwset)
            if valid:
                self.state.apply(tx.rwset, block.number, tx_no)
            flags.append(valid)
        self.chain.append(block)
        return flags


@dataclass
class CommitResult:
    tx_id: str
    block_number: int
    tx_number: int
    valid: bool
    response: dict | None


class LedgerNetwork:
    """The whole channel: organizations, peers, orderer, and the client gateway."""

    def __init__(self, orgs, node_orgs=None, policy=None, seed=0, channel="uwb-roles"):
        if not orgs:
            raise ValueError("need at least one organization")
        self.channel = channel
        self.policy = policy or EndorsementPolicy(required=len(orgs) // 2 + 1)
        if self.policy.required > len(orgs):
            raise ValueError("endorsement policy requires more orgs than exist")
        self.node_orgs = {int(k): v for k, v in (node_orgs or {}).items()}
        self.registry = IdentityRegistry()
        self.peers = {}
        for org in orgs:
            identity = Identity.derive(org, f"peer0.{org}", seed)
            self.registry.register(identity)
            contracts = [
                PathHistoryContract(self.node_orgs),
                RoleAllocationContract(self.node_orgs),
            ]
            self.peers[org] = PeerNode(identity, contracts)
        self.orgs = list(orgs)
        self._nonces = {org: itertools.count() for org in orgs}
        self._pending = []
        self._results = {}
        self._threaded = None

        config = {
            "channel": channel,
            "orgs": self.registry.to_config(),
            "policy": {"required": self.policy.required},
            "contracts": sorted(self.peers[orgs[0]].contracts),
            "node_orgs": {str(k): v for k, v in sorted(self.node_orgs.items())},
        }
        genesis = Block.create(0, GENESIS_PREV_HASH, (), config=config)
        for peer in self.peers.values():
            peer.validate_and_commit(genesis)

    # -- client side -------------------------------------------------------

    def propose(self, contract_id, function, args, submitter_org) -> Proposal:
        if submitter_org not in self.peers:
            raise LedgerError(f"unknown organization {submitter_org!r}")
        return Proposal(
            contract_id=contract_id,
            function=function,
            args=args,
            submitter_org=submitter_org,
            submitter_peer=f"peer0.{submitter_org}",
            nonce=next(self._nonces[submitter_org]),
        )

    def collect_endorsements(self, proposal: Proposal, endorsing_orgs=None) -> list:
        orgs = list(endorsing_orgs) if endorsing_orgs else sorted(self.orgs)[: self.policy.required]
        return [self.peers[org].endorse(proposal) for org in orgs]

    def submit_and_order(self, proposal: Proposal, endorsements) -> str:
        """Policy + determinism checks, then enqueue for block cutting."""
        distinct = {e.org for e in endorsements}
        if len(distinct) < self.policy.required:
            raise LedgerError(
                f"endorsement policy needs {self.policy.required} distinct orgs, got {len(distinct)}"
            )
        reference = canonical_bytes(endorsements[0].rwset.to_payload())
        for e in endorsements[1:]:
            if canonical_bytes(e.rwset.to_payload()) != reference:
                raise LedgerError(
                    f"non-deterministic execution: read/write sets differ between {endorsements[0].peer} and {e.peer}"
                )
        for e in endorsements:
            ok = self.registry.verify(
                e.org, e.peer,
                {"proposal": proposal.payload(), "rwset": e.rwset.to_payload()},
                e.signature,
            )
            if not ok:
                raise LedgerError(f"bad endorsement signature from {e.peer}")
        tx = Transaction(
            proposal=proposal.payload(),
            rwset=endorsements[0].rwset,
            endorsements=tuple(
                {"org": e.org, "peer": e.peer, "sig": e.signature} for e in endorsements
            ),
        )
        tx_id = proposal.tx_id()
        if self._threaded:
            self._threaded.submit(tx_id, tx)
        else:
            self._pending.append((tx_id, tx))
            while len(self._pending) >= BLOCK_CUT_SIZE:
                self._cut_block(self._pending[:BLOCK_CUT_SIZE])
                self._pending = self._pending[BLOCK_CUT_SIZE:]
        return tx_id

    def flush(self):
        """Synchronous mode: cut whatever is pending (the timeout analog)."""
        if self._threaded:
            raise LedgerError("flush is a synchronous-mode operation")
        if self._pending:
            self._cut_block(self._pending)
            self._pending = []

    def _cut_block(self, pending):
        sample = next(iter(self.peers.values()))
        number = len(sample.chain)
        prev_hash = sample.chain[-1].hash
        block = Block.create(number, prev_hash, [tx for _, tx in pending])
        flag_sets = [peer.validate_and_commit(block) for peer in self.peers.values()]
        flags = flag_sets[0]
        for (tx_no, (tx_id, _)), valid in zip(enumerate(pending), flags):
            self._results[tx_id] = CommitResult(
                tx_id=tx_id,
                block_number=number,
                tx_number=tx_no,
                valid=valid,
                response=None,
            )

    def invoke(self, contract_id, function, args, submitter_org, endorsing_orgs=None) -> CommitResult:
        """Full path: endorse, order, commit, return the endorsed response."""
        proposal = self.propose(contract_id, function, args, submitter_org)
        endorsements = self.collect_endorsements(proposal, endorsing_orgs)
        tx_id = self.submit_and_order(proposal, endorsements)
        if self._threaded:
            result = self._threaded.wait(tx_id)
        else:
            self.flush()
            result = self._results[tx_id]
        result.response = endorsements[0].response
        return result

    def result_of(self, tx_id: str) -> CommitResult:
        return self._results[tx_id]

    # -- views ---------------------------------------------------------------

    @property
    def blocks(self) -> list:
        return list(next(iter(self.peers.values())).chain)

    def world_state(self, org=None) -> WorldState:
        org = org or self.orgs[0]
        return self.peers[org].state

    def verify(self) -> int:
        return verify_chain(self.blocks)

    # -- threaded mode -------------------------------------------------------

    def start_threads(self):
        if self._threaded is None:
            self.flush()
            self._threaded = _ThreadedOrdering(self)
        return self

    def stop_threads(self):
        if self._threaded is not None:
            self._threaded.stop()
            self._threaded = None


class _ThreadedOrdering:
    """Orderer thread cutting blocks by size or timeout; peer threads committing."""

    def __init__(self, network: LedgerNetwork):
        self.network = network
        self.inbox = queue.Queue()
        self.events = {}
        self.lock = threading.Lock()
        self.running = True
        self.peer_queues = {org: queue.Queue() for org in network.orgs}
        self.peer_threads = [
            threading.Thread(target=self._peer_loop, args=(org,), daemon=True)
            for org in network.orgs
        ]
        self.orderer_thread = threading.Thread(target=self._orderer_loop, daemon=True)
        for t in self.peer_threads:
            t.start()
        self.orderer_thread.start()

    def submit(self, tx_id, tx):
        with self.lock:
            self.events[tx_id] = threading.Event()
        self.inbox.put((tx_id, tx))

    def wait(self, tx_id, timeout=30.0) -> CommitResult:
        with self.lock:
            event = self.events[tx_id]
        if not event.wait(timeout):
            raise LedgerError(f"transaction {tx_id} did not commit within {timeout}s")
        return self.network._results[tx_id]

    def _orderer_loop(self):
        import time

        pending = []
        deadline = 0.0
        stopping = False
        while True:
            if pending and (
                len(pending) >= BLOCK_CUT_SIZE or stopping or time.monotonic() >= deadline
            ):
                self._dispatch_block(pending[:BLOCK_CUT_SIZE])
                pending = pending[BLOCK_CUT_SIZE:]
                deadline = time.monotonic() + BLOCK_CUT_TIMEOUT_S
                continue
            if stopping:
                break
            timeout = None if not pending else max(deadline - time.monotonic(), 0.0)
            try:
                item = self.inbox.get(timeout=timeout)
            except queue.Empty:
                continue
            if item is None:
                stopping = True
                continue
            if not pending:
                # Batch timeout counts from the first transaction of the batch.
                deadline = time.monotonic() + BLOCK_CUT_TIMEOUT_S
            pending.append(item)

    def _dispatch_block(self, batch):
        network = self.network
        sample = next(iter(network.peers.values()))
        number = len(sample.chain)
        prev_hash = sample.chain[-1].hash
        block = Block.create(number, prev_hash, [tx for _, tx in batch])
        acks = queue.Queue()
        for org in network.orgs:
            self.peer_queues[org].put((block, acks))
        flags = None
        for _ in network.orgs:
            flags = acks.get()
        for tx_no, (tx_id, _) in enumerate(batch):
            network._results[tx_id] = CommitResult(
                tx_id=tx_id,
                block_number=number,
                tx_number=tx_no,
                valid=flags[tx_no],
                response=None,
            )
            with self.lock:
                event = self.events.get(tx_id)
            if event:
                event.set()

    def _peer_loop(self, org):
        q = self.peer_queues[org]
        while True:
            item = q.get()
            if item is None:
                break
            block, acks = item
            flags = self.network.peers[org].validate_and_commit(block)
            acks.put(flags)

    def stop(self):
        self.running = False
        self.inbox.put(None)
        self.orderer_thread.join(timeout=5)
        for org in self.network.orgs:
            self.peer_queues[org].put(None)
        for t in self.peer_threads:
            t.join(timeout=5)
