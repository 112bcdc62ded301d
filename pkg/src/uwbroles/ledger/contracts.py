"""The two chaincodes: path history recording and role allocation.

Contracts execute against a read-only snapshot of a peer's committed state.
Every key they look up is recorded (with its committed version) in the read
set, every put is buffered into the write set; nothing touches world state
until the transaction survives ordering and MVCC validation.
"""

from __future__ import annotations

from ..allocation import allocate_roles
from .codec import assignment_to_payload, canonical_bytes, canonical_decode, position_from_mm
from .state import ReadWriteSet, WorldState


class ContractError(Exception):
    """Deterministic contract-level failure (bad args, access control, missing state)."""


class TxContext:
    """Execution context handed to a contract: snapshot reads, buffered writes."""

    def __init__(self, snapshot: WorldState, submitter_org: str):
        self._snapshot = snapshot
        self.submitter_org = submitter_org
        self._reads = {}
        self._writes = {}

    def get(self, key: str):
        self._reads[key] = self._snapshot.version(key)
        if key in self._writes:
            return self._writes[key]
        return self._snapshot.get(key)

    def put(self, key: str, value: bytes):
        if not isinstance(value, bytes):
            raise ContractError("contract writes must be bytes")
        self._writes[key] = value

    def rwset(self) -> ReadWriteSet:
        return ReadWriteSet(
            reads=tuple(sorted(self._reads.items())),
            writes=tuple(sorted(self._writes.items())),
        )


def _require_owner(ctx: TxContext, node_orgs: dict, node: int):
    owner = node_orgs.get(node)
    if owner is not None and owner != ctx.submitter_org:
        raise ContractError(
            f"org {ctx.submitter_org!r} may not submit data for node {node} (owned by {owner!r})"
        )


def _decode_mm(args, key="pos_mm"):
    mm = args.get(key)
    if (
        not isinstance(mm, (list, tuple))
        or len(mm) != 3
        or any(not isinstance(c, int) for c in mm)
    ):
        raise ContractError(f"{key} must be three integer millimeter components")
    return tuple(int(c) for c in mm)


class PathHistoryContract:
    """Append-only per-node trajectory log under path/<node>/<epoch>."""

    contract_id = "path_history"

    def __init__(self, node_orgs: dict):
        self.node_orgs = dict(node_orgs)

    def execute(self, ctx: TxContext, function: str, args: dict):
        if function != "record_path":
            raise ContractError(f"unknown function {function!r}")
        node = args.get("node")
        epoch = args.get("epoch")
        if not isinstance(node, int) or not isinstance(epoch, int) or epoch < 0:
            raise ContractError("record_path needs integer node and epoch")
        _require_owner(ctx, self.node_orgs, node)
        mm = _decode_mm(args)
        key = f"path/{node}/{epoch}"
        ctx.get(key)  # read-your-target: same-block duplicates turn stale
        ctx.put(key, canonical_bytes({"node": node, "epoch": epoch, "mm": list(mm)}))
        return {"key": key}


class RoleAllocationContract:
    """Latest positions under pos/<node>; per-epoch decisions under roles/<epoch>."""

    contract_id = "role_allocation"

    def __init__(self, node_orgs: dict):
        self.node_orgs = dict(node_orgs)

    def execute(self, ctx: TxContext, function: str, args: dict):
        if function == "report_position":
            return self._report_position(ctx, args)
        if function == "allocate":
            return self._allocate(ctx, args)
        raise ContractError(f"unknown function {function!r}")

    def _report_position(self, ctx: TxContext, args: dict):
        node = args.get("node")
        epoch = args.get("epoch")
        if not isinstance(node, int) or not isinstance(epoch, int) or epoch < 0:
            raise ContractError("report_position needs integer node and epoch")
        _require_owner(ctx, self.node_orgs, node)
        mm = _decode_mm(args)
        key = f"pos/{node}"
        ctx.get(key)
        ctx.put(key, canonical_bytes({"node": node, "epoch": epoch, "mm": list(mm)}))
        return {"key": key}

    def _allocate(self, ctx: TxContext, args: dict):
        epoch = args.get("epoch")
        k = args.get("k")
        nodes = args.get("nodes")
        always_active = args.get("always_active", [])
        if not isinstance(epoch, int) or epoch < 0:
            raise ContractError("allocate needs a non-negative integer epoch")
        if not isinstance(k, int) or k < 1:
            raise ContractError("allocate needs a positive integer k")
        if not isinstance(nodes, list) or not nodes:
            raise ContractError("allocate needs the node id list")

        positions = {}
        missing = []
        for node in sorted(int(n) for n in nodes):
            raw = ctx.get(f"pos/{node}")
            if raw is None:
                missing.append(node)
                continue
            try:
                record = canonical_decode(raw)
                mm = record["mm"]
                if not isinstance(mm, list) or len(mm) != 3:
                    raise ValueError
            except (ValueError, KeyError, TypeError) as exc:
                raise ContractError(f"malformed position record for node {node}") from exc
            positions[node] = position_from_mm(mm)
        if missing:
            raise ContractError(f"no position recorded for nodes {missing}")

        assignment = allocate_roles(
            positions, k, tuple(int(a) for a in always_active), epoch=epoch
        )
        payload = assignment_to_payload(assignment)
        ctx.put(f"roles/{epoch}", canonical_bytes(payload))
        return payload
