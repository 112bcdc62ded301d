"""Canonical byte encoding for everything that gets hashed or signed.

Two peers must produce byte-identical read/write sets for the same logical
transaction, so the encoding is fully deterministic: length-prefixed,
tag-typed, dict keys sorted. Floats are deliberately unsupported; positions
cross the ledger boundary as signed 64-bit fixed-point millimeters.
"""

from __future__ import annotations

import hashlib
import struct

MM_PER_M = 1000
_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


def canonical_bytes(obj) -> bytes:
    """Deterministic serialization of None/bool/int/str/bytes/list/dict trees."""
    if obj is None:
        return b"N"
    if obj is True:
        return b"T"
    if obj is False:
        return b"F"
    if isinstance(obj, int):
        if not _I64_MIN <= obj <= _I64_MAX:
            raise ValueError(f"integer out of 64-bit range: {obj}")
        return b"I" + struct.pack(">q", obj)
    if isinstance(obj, float):
        raise TypeError("floats are not canonical; use fixed-point integers")
    if isinstance(obj, str):
        raw = obj.encode("utf-8")
        return b"S" + struct.pack(">I", len(raw)) + raw
    if isinstance(obj, (bytes, bytearray)):
        return b"B" + struct.pack(">I", len(obj)) + bytes(obj)
    if isinstance(obj, (list, tuple)):
        parts = [canonical_bytes(x) for x in obj]
        return b"L" + struct.pack(">I", len(parts)) + b"".join(parts)
    if isinstance(obj, dict):
        keys = sorted(obj)
        if any(not isinstance(k, str) for k in keys):
            raise TypeError("canonical dict keys must be strings")
        parts = [canonical_bytes(k) + canonical_bytes(obj[k]) for k in keys]
        return b"D" + struct.pack(">I", len(parts)) + b"".join(parts)
    raise TypeError(f"type {type(obj).__name__} has no canonical encoding")


def canonical_decode(data: bytes):
    """Inverse of canonical_bytes; rejects trailing garbage."""
    obj, off = _decode(data, 0)
    if off != len(data):
        raise ValueError(f"{len(data) - off} trailing bytes after canonical value")
    return obj


def _decode(data: bytes, off: int):
    tag = data[off : off + 1]
    off += 1
    if tag == b"N":
        return None, off
    if tag == b"T":
        return True, off
    if tag == b"F":
        return False, off
    if tag == b"I":
        return struct.unpack(">q", data[off : off + 8])[0], off + 8
    if tag == b"S":
        (n,) = struct.unpack(">I", data[off : off + 4])
        off += 4
        return data[off : off + n].decode("utf-8"), off + n
    if tag == b"B":
        (n,) = struct.unpack(">I", data[off : off + 4])
        off += 4
        return bytes(data[off : off + n]), off + n
    if tag == b"L":
        (n,) = struct.unpack(">I", data[off : off + 4])
        off += 4
        items = []
        for _ in range(n):
            item, off = _decode(data, off)
            items.append(item)
        return items, off
    if tag == b"D":
        (n,) = struct.unpack(">I", data[off : off + 4])
        off += 4
        out = {}
        for _ in range(n):
            key, off = _decode(data, off)
            value, off = _decode(data, off)
            out[key] = value
        return out, off
    raise ValueError(f"unknown canonical tag {tag!r} at offset {off - 1}")


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def position_to_mm(p) -> tuple:
    """Quantize a position in meters to integer millimeters (banker's rounding)."""
    out = tuple(int(round(float(c) * MM_PER_M)) for c in p)
    if len(out) != 3:
        raise ValueError("position must have 3 components")
    for c in out:
        if not _I64_MIN <= c <= _I64_MAX:
            raise ValueError(f"fixed-point overflow: {c} mm")
    return out


def position_from_mm(mm) -> tuple:
    """Decode integer millimeters back to meters."""
    if len(mm) != 3:
        raise ValueError("fixed-point position must have 3 components")
    return tuple(int(c) / MM_PER_M for c in mm)


def assignment_to_payload(assignment) -> dict:
    """Ledger encoding of a role assignment; cost carried as micro-m^2."""
    return {
        "epoch": int(assignment.epoch),
        "active": [int(a) for a in assignment.active],
        "passive": [int(p) for p in assignment.passive],
        "cost_um2": int(round(assignment.cost * 1_000_000)),
    }
