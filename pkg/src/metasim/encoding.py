"""Canonical byte encoding shared by every signed or persisted structure.

A record is a sequence of fields in declaration order. Each field is a
4-byte big-endian length followed by the payload:

* ``bytes``  -> raw bytes
* ``str``    -> UTF-8
* ``int``    -> 8-byte big-endian unsigned (fixed width)
* ``bool``   -> single byte 0x00 / 0x01
* ``None``   -> zero-length payload
* ``list``/``tuple`` -> nested canonical record (u32 item count, then items)

Decoding is schema driven: :func:`decode_fields` only splits a record into
raw payloads and the caller interprets each one.
"""

from __future__ import annotations

import struct
from typing import Iterable

from .errors import EncodingError

U32 = struct.Struct(">I")
U64 = struct.Struct(">Q")
U64_MAX = (1 << 64) - 1


def _payload(value) -> bytes:
    if isinstance(value, bool):
        return b"\x01" if value else b"\x00"
    if isinstance(value, int):
        if not 0 <= value <= U64_MAX:
            raise EncodingError("int-range", str(value))
        return U64.pack(value)
    if isinstance(value, (bytes, bytearray, memoryview)):
        return bytes(value)
    if isinstance(value, str):
        return value.encode("utf-8")
    if value is None:
        return b""
    if isinstance(value, (list, tuple)):
        return encode_list(value)
    raise EncodingError("unencodable", type(value).__name__)


def encode(*fields) -> bytes:
    """Encode ``fields`` as one canonical record."""
    out = bytearray()
    for value in fields:
        body = _payload(value)
        out += U32.pack(len(body))
        out += body
    return bytes(out)


def encode_list(items: Iterable) -> bytes:
    items = list(items)
    return U32.pack(len(items)) + encode(*items)


def decode_fields(data: bytes, expected: int | None = None) -> list[bytes]:
    """Split a canonical record into its raw field payloads."""
    fields = []
    pos = 0
    n = len(data)
    while pos < n:
        if pos + 4 > n:
            raise EncodingError("truncated", f"length prefix at {pos}")
        (length,) = U32.unpack_from(data, pos)
        pos += 4
        if pos + length > n:
            raise EncodingError("truncated", f"field at {pos} wants {length} bytes")
        fields.append(bytes(data[pos:pos + length]))
        pos += length
    if expected is not None and len(fields) != expected:
        raise EncodingError("field-count", f"expected {expected}, got {len(fields)}")
    return fields


def decode_list(data: bytes) -> list[bytes]:
    if len(data) < 4:
        raise EncodingError("truncated", "list count")
    (count,) = U32.unpack_from(data, 0)
    return decode_fields(data[4:], expected=count)


def as_int(raw: bytes) -> int:
    if len(raw) != 8:
        raise EncodingError("bad-int", f"{len(raw)} bytes")
    return U64.unpack(raw)[0]


def as_str(raw: bytes) -> str:
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError("bad-utf8", str(exc)) from None


def as_bool(raw: bytes) -> bool:
    if raw not in (b"\x00", b"\x01"):
        raise EncodingError("bad-bool", raw.hex())
    return raw == b"\x01"


def as_optional_str(raw: bytes) -> str | None:
    return as_str(raw) if raw else None
