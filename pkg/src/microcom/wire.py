"""Binary framed protocol: value marshaling and message framing.

Frame layout (all integers big-endian)::

    offset  size  field
    0       4     magic "MCOM"
    4       2     protocol version, currently 1
    6       1     message type
    7       1     flags, currently 0
    8       4     correlation id
    12      4     payload length
    16      n     payload

Value encoding is a tag byte followed by the body: null (nothing),
bool (1 byte), i64 (8 bytes two's-complement), f64 (8 bytes binary64),
string/bytes (u32 length + raw, UTF-8 for strings), guid (16 octets),
list (u16 count + concatenated elements).  Strings and byte blobs are
capped at 2**20 bytes and lists nest at most 8 deep, so a hostile peer
cannot force unbounded allocation.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .errors import ProtocolError, Status
from .guid import Guid, guid_format

MAGIC = b"MCOM"
PROTO_VERSION = 1
HEADER = struct.Struct(">4sHBBII")
HEADER_SIZE = HEADER.size  # 16

MAX_BLOB = 2**20
MAX_LIST_DEPTH = 8
MAX_LIST_LEN = 0xFFFF
MAX_PAYLOAD = 2**24  # frame-level cap against hostile length fields

_I64_MIN = -(2**63)
_I64_MAX = 2**63 - 1


class MsgType(enum.IntEnum):
    ACTIVATE_REQ = 1
    ACTIVATE_RESP = 2
    CALL_REQ = 3
    CALL_RESP = 4
    ADDREF = 5
    RELEASE = 6
    COUNT_RESP = 7
    BYE = 8
    QUERY_REQ = 9
    QUERY_RESP = 10


class Tag(enum.IntEnum):
    NULL = 0
    BOOL = 1
    I64 = 2
    F64 = 3
    STRING = 4
    BYTES = 5
    GUID = 6
    LIST = 7


# WireValue is a plain Python value: None | bool | int | float | str |
# bytes | Guid | list of WireValue.


def encode_value(v, _depth: int = 0) -> bytes:
    if v is None:
        return bytes([Tag.NULL])
    if isinstance(v, bool):  # must precede int: bool is an int subclass
        return bytes([Tag.BOOL, 1 if v else 0])
    if isinstance(v, int):
        if not _I64_MIN <= v <= _I64_MAX:
            raise ProtocolError(f"integer {v} does not fit in i64")
        return bytes([Tag.I64]) + struct.pack(">q", v)
    if isinstance(v, float):
        return bytes([Tag.F64]) + struct.pack(">d", v)
    if isinstance(v, str):
        raw = v.encode("utf-8")
        if len(raw) > MAX_BLOB:
            raise ProtocolError(f"string of {len(raw)} bytes exceeds {MAX_BLOB}")
        return bytes([Tag.STRING]) + struct.pack(">I", len(raw)) + raw
    if isinstance(v, (bytes, bytearray)):
        if len(v) > MAX_BLOB:
            raise ProtocolError(f"blob of {len(v)} bytes exceeds {MAX_BLOB}")
        return bytes([Tag.BYTES]) + struct.pack(">I", len(v)) + bytes(v)
    if isinstance(v, Guid):
        return bytes([Tag.GUID]) + v.octets
    if isinstance(v, (list, tuple)):
        if _depth + 1 > MAX_LIST_DEPTH:
            raise ProtocolError(f"lists nest deeper than {MAX_LIST_DEPTH}")
        if len(v) > MAX_LIST_LEN:
            raise ProtocolError(f"list of {len(v)} elements exceeds {MAX_LIST_LEN}")
        out = [bytes([Tag.LIST]), struct.pack(">H", len(v))]
        for item in v:
            out.append(encode_value(item, _depth + 1))
        return b"".join(out)
    raise ProtocolError(f"{type(v).__name__} is not a wire value type")


def _decode_value(b: bytes, pos: int, depth: int):
    if pos >= len(b):
        raise ProtocolError("truncated value")
    tag = b[pos]
    pos += 1
    if tag == Tag.NULL:
        return None, pos
    if tag == Tag.BOOL:
        if pos >= len(b):
            raise ProtocolError("truncated bool")
        flag = b[pos]
        if flag not in (0, 1):
            raise ProtocolError(f"bool byte must be 0 or 1, got {flag}")
        return bool(flag), pos + 1
    if tag == Tag.I64:
        if pos + 8 > len(b):
            raise ProtocolError("truncated i64")
        return struct.unpack_from(">q", b, pos)[0], pos + 8
    if tag == Tag.F64:
        if pos + 8 > len(b):
            raise ProtocolError("truncated f64")
        return struct.unpack_from(">d", b, pos)[0], pos + 8
    if tag in (Tag.STRING, Tag.BYTES):
        if pos + 4 > len(b):
            raise ProtocolError("truncated length prefix")
        (length,) = struct.unpack_from(">I", b, pos)
        pos += 4
        if length > MAX_BLOB:
            raise ProtocolError(f"blob of {length} bytes exceeds {MAX_BLOB}")
        if pos + length > len(b):
            raise ProtocolError("truncated blob body")
        raw = b[pos : pos + length]
        pos += length
        if tag == Tag.BYTES:
            return raw, pos
        try:
            return raw.decode("utf-8"), pos
        except UnicodeDecodeError as exc:
            raise ProtocolError(f"invalid UTF-8 in string: {exc}") from None
    if tag == Tag.GUID:
        if pos + 16 > len(b):
            raise ProtocolError("truncated guid")
        return Guid(b[pos : pos + 16]), pos + 16
    if tag == Tag.LIST:
        if depth + 1 > MAX_LIST_DEPTH:
            raise ProtocolError(f"lists nest deeper than {MAX_LIST_DEPTH}")
        if pos + 2 > len(b):
            raise ProtocolError("truncated list count")
        (count,) = struct.unpack_from(">H", b, pos)
        pos += 2
        items = []
        for _ in range(count):
            item, pos = _decode_value(b, pos, depth + 1)
            items.append(item)
        return items, pos
    raise ProtocolError(f"unknown value tag {tag}")


def decode_value(b: bytes):
    """Decode exactly one value; trailing bytes are a protocol error."""
    v, pos = _decode_value(b, 0, 0)
    if pos != len(b):
        raise ProtocolError(f"{len(b) - pos} trailing byte(s) after value")
    return v


@dataclass(frozen=True)
class WireMessage:
    msg_type: int
    correlation_id: int = 0
    payload: bytes = b""
    flags: int = 0
    proto_version: int = PROTO_VERSION


def encode_message(m: WireMessage) -> bytes:
    if len(m.payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(m.payload)} bytes exceeds {MAX_PAYLOAD}")
    return (
        HEADER.pack(
            MAGIC,
            m.proto_version,
            m.msg_type,
            m.flags,
            m.correlation_id,
            len(m.payload),
        )
        + m.payload
    )


def decode_header(b: bytes) -> tuple[WireMessage, int]:
    """Validate a frame header and return the (payload-less) message + length."""
    if len(b) < HEADER_SIZE:
        raise ProtocolError(f"header needs {HEADER_SIZE} bytes, got {len(b)}")
    magic, version, msg_type, flags, correlation_id, length = HEADER.unpack_from(b)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {magic!r}")
    if version != PROTO_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise ProtocolError(f"unknown message type {msg_type}") from None
    if length > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {length} bytes exceeds {MAX_PAYLOAD}")
    return (
        WireMessage(
            msg_type=msg_type,
            correlation_id=correlation_id,
            flags=flags,
            proto_version=version,
        ),
        length,
    )


def decode_message(b: bytes) -> WireMessage:
    head, length = decode_header(b)
    if len(b) != HEADER_SIZE + length:
        raise ProtocolError(
            f"payload length field says {length}, frame carries {len(b) - HEADER_SIZE}"
        )
    return WireMessage(
        msg_type=head.msg_type,
        correlation_id=head.correlation_id,
        payload=b[HEADER_SIZE:],
        flags=head.flags,
        proto_version=head.proto_version,
    )


# --- payload layouts ----------------------------------------------------
#
# ACTIVATE_REQ  = clsid 16 + iid 16
# ACTIVATE_RESP = status u32 + object_id u64
# CALL_REQ      = object_id u64 + iid 16 + ordinal u16 + argc u16 + args
# CALL_RESP     = status u32 + one value
# ADDREF        = object_id u64
# RELEASE       = object_id u64
# COUNT_RESP    = status u32 + count u32
# BYE           = empty
# QUERY_REQ     = object_id u64 + iid 16
# QUERY_RESP    = status u32 + object_id u64


def _need(b: bytes, n: int, what: str) -> None:
    if len(b) != n:
        raise ProtocolError(f"{what} payload must be {n} bytes, got {len(b)}")


def build_activate_req(clsid: Guid, iid: Guid) -> bytes:
    return clsid.octets + iid.octets


def parse_activate_req(b: bytes) -> tuple[Guid, Guid]:
    _need(b, 32, "ACTIVATE_REQ")
    return Guid(b[:16]), Guid(b[16:])


def build_activate_resp(status: int, object_id: int) -> bytes:
    return struct.pack(">IQ", status, object_id)


def parse_activate_resp(b: bytes) -> tuple[int, int]:
    _need(b, 12, "ACTIVATE_RESP")
    return struct.unpack(">IQ", b)


def build_call_req(object_id: int, iid: Guid, ordinal: int, args: list) -> bytes:
    out = [struct.pack(">Q", object_id), iid.octets, struct.pack(">HH", ordinal, len(args))]
    for a in args:
        out.append(encode_value(a))
    return b"".join(out)


def parse_call_req(b: bytes) -> tuple[int, Guid, int, list]:
    if len(b) < 28:
        raise ProtocolError(f"CALL_REQ payload must be at least 28 bytes, got {len(b)}")
    (object_id,) = struct.unpack_from(">Q", b, 0)
    iid = Guid(b[8:24])
    ordinal, argc = struct.unpack_from(">HH", b, 24)
    pos = 28
    args = []
    for _ in range(argc):
        v, pos = _decode_value(b, pos, 0)
        args.append(v)
    if pos != len(b):
        raise ProtocolError(f"{len(b) - pos} trailing byte(s) after CALL_REQ args")
    return object_id, iid, ordinal, args


def build_call_resp(status: int, value) -> bytes:
    return struct.pack(">I", status) + encode_value(value)


def parse_call_resp(b: bytes) -> tuple[int, object]:
    if len(b) < 4:
        raise ProtocolError(f"CALL_RESP payload must be at least 4 bytes, got {len(b)}")
    (status,) = struct.unpack_from(">I", b, 0)
    return status, decode_value(b[4:])


def build_object_id(object_id: int) -> bytes:
    return struct.pack(">Q", object_id)


def parse_object_id(b: bytes, what: str = "ADDREF/RELEASE") -> int:
    _need(b, 8, what)
    return struct.unpack(">Q", b)[0]


def build_count_resp(status: int, count: int) -> bytes:
    return struct.pack(">II", status, count)


def parse_count_resp(b: bytes) -> tuple[int, int]:
    _need(b, 8, "COUNT_RESP")
    return struct.unpack(">II", b)


def build_query_req(object_id: int, iid: Guid) -> bytes:
    return struct.pack(">Q", object_id) + iid.octets


def parse_query_req(b: bytes) -> tuple[int, Guid]:
    _need(b, 24, "QUERY_REQ")
    return struct.unpack(">Q", b[:8])[0], Guid(b[8:])


def build_query_resp(status: int, object_id: int) -> bytes:
    return struct.pack(">IQ", status, object_id)


def parse_query_resp(b: bytes) -> tuple[int, int]:
    _need(b, 12, "QUERY_RESP")
    return struct.unpack(">IQ", b)


def render_value(v) -> str:
    """Canonical text rendering used by the CLI and the transparency checks.

    ``null``, ``bool:true``, ``i64:N``, ``f64:<repr>``, ``str:"..."``,
    ``bytes:<hex>``, ``guid:{...}``, ``list:[...]``.
    """
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "bool:true" if v else "bool:false"
    if isinstance(v, int):
        return f"i64:{v}"
    if isinstance(v, float):
        return f"f64:{v!r}"
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'str:"{escaped}"'
    if isinstance(v, (bytes, bytearray)):
        return f"bytes:{bytes(v).hex()}"
    if isinstance(v, Guid):
        return f"guid:{guid_format(v)}"
    if isinstance(v, (list, tuple)):
        return "list:[" + ",".join(render_value(x) for x in v) + "]"
    raise ProtocolError(f"{type(v).__name__} is not a wire value type")


__all__ = [
    "MAGIC",
    "PROTO_VERSION",
    "HEADER_SIZE",
    "MAX_BLOB",
    "MAX_LIST_DEPTH",
    "MAX_PAYLOAD",
    "MsgType",
    "Tag",
    "WireMessage",
    "Status",
    "encode_value",
    "decode_value",
    "encode_message",
    "decode_message",
    "decode_header",
    "render_value",
]
