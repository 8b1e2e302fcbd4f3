"""Canonical, byte-stable serialization.

Two encodings live here:

* canonical JSON — UTF-8, sorted keys, no whitespace. Used for everything
  that gets hashed or signed (ledger entries, credential bundles, policy
  snapshots) and for newline-delimited log exports.
* length-prefixed binary records — used by the on-disk pod store. Each
  field is a 4-byte big-endian length followed by the raw bytes; integers
  are 8-byte big-endian. The layout is documented in the README and must
  stay stable across versions.
"""

from __future__ import annotations

import json
import struct
from typing import Any, BinaryIO

from .errors import ValidationError


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON bytes: sorted keys, compact separators, ASCII-safe."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True
    ).encode("ascii")


def from_canonical_json(data: bytes) -> Any:
    return json.loads(data.decode("utf-8"))


# --- length-prefixed binary primitives ---------------------------------


def write_bytes(fh: BinaryIO, data: bytes) -> None:
    if len(data) > 0xFFFFFFFF:
        raise ValidationError("field exceeds 4 GiB record limit")
    fh.write(struct.pack(">I", len(data)))
    fh.write(data)


def write_str(fh: BinaryIO, text: str) -> None:
    write_bytes(fh, text.encode("utf-8"))


def write_u64(fh: BinaryIO, value: int) -> None:
    if value < 0:
        raise ValidationError("u64 fields must be non-negative")
    fh.write(struct.pack(">Q", value))


def read_bytes(fh: BinaryIO) -> bytes:
    header = fh.read(4)
    if len(header) != 4:
        raise ValidationError("truncated record: missing length prefix")
    (length,) = struct.unpack(">I", header)
    data = fh.read(length)
    if len(data) != length:
        raise ValidationError("truncated record: short field")
    return data


def read_str(fh: BinaryIO) -> str:
    return read_bytes(fh).decode("utf-8")


def read_u64(fh: BinaryIO) -> int:
    data = fh.read(8)
    if len(data) != 8:
        raise ValidationError("truncated record: short u64")
    (value,) = struct.unpack(">Q", data)
    return value
