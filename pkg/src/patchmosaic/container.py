"""Shared binary container layout for library, model, and component files.

Layout, in order:

* 4-byte ASCII magic identifying the file kind,
* 8-byte little-endian unsigned header length,
* UTF-8 JSON header (compact separators, sorted keys),
* raw binary blocks whose sizes the header determines.

Writing the header with sorted keys and compact separators makes
save -> load -> save byte-stable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

from .errors import DataError

_LEN_STRUCT = struct.Struct("<Q")


def encode_header(header: dict[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_container(
    path: str | Path, magic: bytes, header: dict[str, Any], blocks: list[bytes]
) -> None:
    if len(magic) != 4:
        raise ValueError("container magic must be 4 bytes")
    payload = encode_header(header)
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(_LEN_STRUCT.pack(len(payload)))
        fh.write(payload)
        for block in blocks:
            fh.write(block)


def read_container(path: str | Path, magic: bytes) -> tuple[dict[str, Any], bytes]:
    """Return (header, binary tail); raises DataError on any corruption."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != magic:
        raise DataError(
            f"{path}: bad magic {data[:4]!r}, expected {magic!r}"
        )
    if len(data) < 12:
        raise DataError(f"{path}: truncated container")
    (header_len,) = _LEN_STRUCT.unpack(data[4:12])
    if 12 + header_len > len(data):
        raise DataError(f"{path}: truncated container header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt container header ({exc})") from None
    if not isinstance(header, dict):
        raise DataError(f"{path}: container header is not an object")
    return header, data[12 + header_len :]
