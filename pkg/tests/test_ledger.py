import time

import numpy as np
import pytest

from uwbroles.allocation import allocate_roles
from uwbroles.ledger.audit import replay
from uwbroles.ledger.chain import (
    Block,
    ChainIntegrityError,
    block_from_json,
    block_to_json,
    verify_chain,
)
from uwbroles.ledger.codec import (
    assignment_to_payload,
    canonical_bytes,
    canonical_decode,
    position_from_mm,
    position_to_mm,
)
from uwbroles.ledger.identity import Identity, IdentityRegistry
from uwbroles.ledger.network import EndorsementPolicy, LedgerError, LedgerNetwork
from uwbroles.ledger.state import ReadWriteSet, WorldState

ORGS = [f"org{i}" for i in range(3, 9)]
NODE_ORGS = {i: f"org{i}" for i in range(3, 9)}
SQUARE_PLUS_CENTER = {
    1: (0.0, 0.0, 0.0), 2: (2.0, 0.0, 0.0), 3: (0.0, 2.0, 0.0),
    4: (2.0, 2.0, 0.0), 5: (1.0, 1.0, 0.0),
}


def make_network(**kwargs):
    kwargs.setdefault("node_orgs", NODE_ORGS)
    kwargs.setdefault("seed", 42)
    return LedgerNetwork(ORGS, **kwargs)


def seed_positions(net, positions, epoch=0):
    for nid, p in sorted(positions.items()):
        org = NODE_ORGS.get(nid, ORGS[0])
        result = net.invoke(
            "role_allocation", "report_position",
            {"node": nid, "epoch": epoch, "pos_mm": list(position_to_mm(p))}, org,
        )
        assert result.valid


# -- codec --------------------------------------------------------------------

def test_canonical_roundtrip():
    obj = {
        "b": [1, -5, 2**40], "a": "text", "c": None, "d": True,
        "e": {"nested": [b"\x00\xff", False]},
    }
    assert canonical_decode(canonical_bytes(obj)) == obj


def test_canonical_is_key_order_independent():
    assert canonical_bytes({"x": 1, "y": 2}) == canonical_bytes({"y": 2, "x": 1})


def test_canonical_rejects_floats():
    with pytest.raises(TypeError):
        canonical_bytes({"x": 1.5})


def test_canonical_rejects_wide_integers():
    with pytest.raises(ValueError):
        canonical_bytes(2**70)


def test_canonical_rejects_trailing_bytes():
    with pytest.raises(ValueError):
        canonical_decode(canonical_bytes(1) + b"junk")


def test_fixed_point_roundtrip():
    p = (1.2345678, -0.5604, 0.0)
    mm = position_to_mm(p)
    assert mm == (1235, -560, 0)
    assert position_from_mm(mm) == (1.235, -0.56, 0.0)


def test_fixed_point_quantization_is_idempotent():
    gen = np.random.Generator(np.random.PCG64(4))
    for _ in range(200):
        p = tuple(gen.uniform(-10, 10, 3))
        q = position_from_mm(position_to_mm(p))
        assert position_from_mm(position_to_mm(q)) == q


# -- identity -----------------------------------------------------------------

def test_identity_sign_verify():
    ident = Identity.derive("org3", "peer0.org3", seed=1)
    registry = IdentityRegistry()
    registry.register(ident)
    payload = {"msg": "hello", "n": 3}
    sig = ident.sign(payload)
    assert registry.verify("org3", "peer0.org3", payload, sig)
    assert not registry.verify("org3", "peer0.org3", {"msg": "tampered", "n": 3}, sig)
    assert not registry.verify("org4", "peer0.org4", payload, sig)


def test_identity_keys_are_seed_deterministic():
    a = Identity.derive("org3", "peer0.org3", seed=7)
    b = Identity.derive("org3", "peer0.org3", seed=7)
    c = Identity.derive("org3", "peer0.org3", seed=8)
    assert a.verification_key == b.verification_key
    assert a.verification_key != c.verification_key


def test_registry_config_roundtrip():
    registry = IdentityRegistry()
    registry.register(Identity.derive("org3", "peer0.org3", seed=1))
    clone = IdentityRegistry.from_config(registry.to_config())
    assert clone.keys == registry.keys


# -- world state and MVCC -------------------------------------------------------

def test_rwset_rejects_duplicate_keys():
    with pytest.raises(ValueError):
        ReadWriteSet(reads=(("k", None), ("k", None)), writes=())


def test_mvcc_validation():
    state = WorldState()
    rw1 = ReadWriteSet(reads=(("k", None),), writes=(("k", b"v1"),))
    rw2 = ReadWriteSet(reads=(("k", None),), writes=(("k", b"v2"),))
    assert state.validate(rw1)
    state.apply(rw1, block_no=1, tx_no=0)
    assert not state.validate(rw2)  # stale read of the never-written version
    rw3 = ReadWriteSet(reads=(("k", (1, 0)),), writes=(("k", b"v3"),))
    assert state.validate(rw3)


# -- endorsement --------------------------------------------------------------

def test_peers_with_identical_state_endorse_identically():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsements = net.collect_endorsements(proposal, endorsing_orgs=ORGS)
    payloads = {canonical_bytes(e.rwset.to_payload()) for e in endorsements}
    assert len(payloads) == 1


def test_unapproved_contract_rejected():
    net = make_network()
    net.peers["org3"].approved.discard("path_history")
    proposal = net.propose(
        "path_history", "record_path",
        {"node": 3, "epoch": 0, "pos_mm": [0, 0, 0]}, "org3",
    )
    with pytest.raises(LedgerError):
        net.peers["org3"].endorse(proposal)


def test_unknown_contract_rejected():
    net = make_network()
    proposal = net.propose("definitely_not_deployed", "f", {}, "org3")
    with pytest.raises(LedgerError):
        net.peers["org3"].endorse(proposal)


def test_endorsed_allocation_matches_direct_call():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsement = net.peers["org3"].endorse(proposal)
    quantized = {n: position_from_mm(position_to_mm(p)) for n, p in SQUARE_PLUS_CENTER.items()}
    expected = assignment_to_payload(allocate_roles(quantized, 4, epoch=0))
    writes = dict(endorsement.rwset.writes)
    assert writes["roles/0"] == canonical_bytes(expected)


# -- ordering -----------------------------------------------------------------

def test_policy_accepts_exact_quorum():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsements = net.collect_endorsements(proposal, endorsing_orgs=ORGS[:4])
    net.submit_and_order(proposal, endorsements)
    net.flush()
    assert net.verify() > 0


def test_policy_rejects_three_of_six():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsements = net.collect_endorsements(proposal, endorsing_orgs=ORGS[:3])
    with pytest.raises(LedgerError):
        net.submit_and_order(proposal, endorsements)


def test_divergent_rwset_rejected():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    # poison one peer's committed state: its endorsement must now disagree
    poisoned = net.peers["org4"].state
    key = "pos/5"
    value, version = poisoned.entries[key]
    poisoned.entries[key] = (
        canonical_bytes({"epoch": 0, "mm": [999, 999, 0], "node": 5}), version,
    )
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsements = net.collect_endorsements(proposal, endorsing_orgs=ORGS[:4])
    with pytest.raises(LedgerError, match="read/write sets differ"):
        net.submit_and_order(proposal, endorsements)


def test_bad_signature_rejected():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    endorsements = net.collect_endorsements(proposal, endorsing_orgs=ORGS[:4])
    forged = endorsements[0].__class__(
        org=endorsements[0].org,
        peer=endorsements[0].peer,
        rwset=endorsements[0].rwset,
        response=endorsements[0].response,
        signature=bytes(64),
    )
    with pytest.raises(LedgerError, match="signature"):
        net.submit_and_order(proposal, [forged] + endorsements[1:])


# -- contracts through the network ---------------------------------------------

def test_record_path_key_schema():
    net = make_network()
    result = net.invoke(
        "path_history", "record_path",
        {"node": 3, "epoch": 17, "pos_mm": [1234, -560, 0]}, "org3",
    )
    assert result.valid
    stored = net.world_state().get("path/3/17")
    assert canonical_decode(stored) == {"node": 3, "epoch": 17, "mm": [1234, -560, 0]}


def test_record_path_access_control():
    net = make_network()
    proposal = net.propose(
        "path_history", "record_path",
        {"node": 3, "epoch": 0, "pos_mm": [0, 0, 0]}, "org4",
    )
    from uwbroles.ledger.contracts import ContractError

    with pytest.raises(ContractError, match="org4"):
        net.peers["org4"].endorse(proposal)


def test_anchor_positions_reportable_by_any_org():
    net = make_network()
    result = net.invoke(
        "role_allocation", "report_position",
        {"node": 1, "epoch": 0, "pos_mm": [0, 0, 0]}, "org5",
    )
    assert result.valid


def test_allocate_missing_position_names_node():
    net = make_network()
    seed_positions(net, {k: v for k, v in SQUARE_PLUS_CENTER.items() if k != 5})
    from uwbroles.ledger.contracts import ContractError

    proposal = net.propose(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    with pytest.raises(ContractError, match=r"\[5\]"):
        net.peers["org3"].endorse(proposal)


def test_same_block_duplicate_write_invalidates_second():
    net = make_network()
    args = {"node": 3, "epoch": 9, "pos_mm": [100, 200, 0]}
    tx_ids = []
    for _ in range(2):
        proposal = net.propose("path_history", "record_path", args, "org3")
        endorsements = net.collect_endorsements(proposal)
        tx_ids.append(net.submit_and_order(proposal, endorsements))
    net.flush()
    first, second = (net.result_of(t) for t in tx_ids)
    assert first.block_number == second.block_number
    assert first.valid and not second.valid


def test_distinct_block_duplicate_write_overwrites():
    net = make_network()
    for value in ([100, 200, 0], [300, 400, 0]):
        result = net.invoke(
            "path_history", "record_path",
            {"node": 3, "epoch": 9, "pos_mm": value}, "org3",
        )
        assert result.valid
    stored = canonical_decode(net.world_state().get("path/3/9"))
    assert stored["mm"] == [300, 400, 0]


# -- blocks, replication, audit -------------------------------------------------

def test_chain_verifies_and_detects_tamper():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    blocks = net.blocks
    assert verify_chain(blocks) == len(blocks)
    tampered = list(blocks)
    victim = tampered[2]
    tx = victim.transactions[0]
    bad_tx = tx.__class__(proposal=dict(tx.proposal, nonce=999), rwset=tx.rwset,
                          endorsements=tx.endorsements)
    tampered[2] = Block(
        number=victim.number, prev_hash=victim.prev_hash,
        transactions=(bad_tx,) + victim.transactions[1:],
        config=victim.config, hash=victim.hash,
    )
    with pytest.raises(ChainIntegrityError) as err:
        verify_chain(tampered)
    assert err.value.block_number == 2


def test_block_json_roundtrip():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    for block in net.blocks:
        clone = block_from_json(block_to_json(block))
        assert clone == block


def test_peers_replicate_identical_state():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    net.invoke(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    digests = [p.state.digest_items() for p in net.peers.values()]
    assert all(d == digests[0] for d in digests)
    chains = [[b.hash for b in p.chain] for p in net.peers.values()]
    assert all(c == chains[0] for c in chains)


def test_replay_reconstructs_live_state():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    net.invoke(
        "role_allocation", "allocate",
        {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
        "org3",
    )
    report = replay(net.blocks)
    assert report.state_digest() == net.world_state().digest_items()
    assert report.role_history == [(0, (1, 2, 3, 4), (5,))]


def test_broken_link_halts_peer():
    net = make_network()
    seed_positions(net, SQUARE_PLUS_CENTER)
    head = net.blocks[-1]
    orphan = Block.create(head.number + 2, head.hash, ())
    with pytest.raises(LedgerError):
        net.peers["org3"].validate_and_commit(orphan)


# -- threaded mode ---------------------------------------------------------------

def test_threaded_and_sync_chains_match():
    def drive(net):
        seed_positions(net, SQUARE_PLUS_CENTER)
        net.invoke(
            "role_allocation", "allocate",
            {"epoch": 0, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
            "org3",
        )

    sync_net = make_network()
    drive(sync_net)
    threaded_net = make_network().start_threads()
    try:
        drive(threaded_net)
    finally:
        threaded_net.stop_threads()
    assert [block_to_json(b) for b in sync_net.blocks] == \
        [block_to_json(b) for b in threaded_net.blocks]


def test_five_hertz_stream_commits_within_block_period():
    net = make_network().start_threads()
    try:
        seed_positions(net, SQUARE_PLUS_CENTER)
        latencies = []
        for epoch in range(8):
            start = time.perf_counter()
            result = net.invoke(
                "role_allocation", "allocate",
                {"epoch": epoch, "k": 4, "always_active": [], "nodes": sorted(SQUARE_PLUS_CENTER)},
                "org3",
            )
            latencies.append(time.perf_counter() - start)
            assert result.valid
            time.sleep(max(0.0, 0.2 - latencies[-1]))
        assert max(latencies) < 0.2
    finally:
        net.stop_threads()


def test_policy_bounds():
    with pytest.raises(ValueError):
        EndorsementPolicy(required=0)
    with pytest.raises(ValueError):
        LedgerNetwork(ORGS[:2], policy=EndorsementPolicy(required=3))
