"""Length-prefixed frame codec and message payloads.

Header layout (12 bytes, big-endian)::

    magic   4s  b"PPIP"
    version B   0x01
    type    B   MsgType
    flags   H
    length  I   payload byte count
"""

from __future__ import annotations

import enum
import json
import random
import struct
import zlib
from dataclasses import dataclass, field
from typing import BinaryIO, Optional

MAGIC = b"PPIP"
VERSION = 0x01
HEADER = struct.Struct("!4sBBHI")
HEADER_LEN = HEADER.size
MAX_PAYLOAD = 2**32 - 1

# flags
FLAG_VERBOSE = 0x0001  # payload is preceded by a self-describing JSON header
FLAG_ACK = 0x0002  # sender waits for an ACK
FLAG_WARMUP = 0x0004  # batch is excluded from measurement


class MsgType(enum.IntEnum):
    HELLO = 1
    ASSIGN = 2
    BATCH = 3
    ACTIVATION = 4
    RESULT = 5
    ACK = 6
    SHUTDOWN = 7
    ERROR = 8


class ProtocolError(Exception):
    """The byte stream violates the wire protocol; the connection must be dropped."""


class BadMagic(ProtocolError):
    pass


class UnknownMessageType(ProtocolError):
    pass


class TruncatedFrame(ProtocolError):
    pass


class ConnectionClosed(EOFError):
    """Clean close at a frame boundary."""


@dataclass(frozen=True)
class Frame:
    msg_type: MsgType
    payload: bytes = b""
    flags: int = 0

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(frame.payload)} bytes exceeds 2**32 - 1")
    if not 0 <= frame.flags <= 0xFFFF:
        raise ProtocolError(f"flags out of range: {frame.flags}")
    return HEADER.pack(MAGIC, VERSION, int(frame.msg_type), frame.flags, len(frame.payload)) + frame.payload


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            break
        buf += chunk
    return bytes(buf)


def decode_header(header: bytes) -> tuple[MsgType, int, int]:
    magic, version, msg_type, flags, length = HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported version {version}")
    try:
        mt = MsgType(msg_type)
    except ValueError:
        raise UnknownMessageType(f"unknown msg_type {msg_type}") from None
    return mt, flags, length


def decode_frame(stream: BinaryIO) -> Frame:
    """Read exactly one frame from a binary stream."""
    header = _read_exact(stream, HEADER_LEN)
    if not header:
        raise ConnectionClosed()
    if len(header) < HEADER_LEN:
        raise TruncatedFrame(f"stream ended after {len(header)} header bytes")
    msg_type, flags, length = decode_header(header)
    payload = _read_exact(stream, length)
    if len(payload) < length:
        raise TruncatedFrame(f"payload declared {length} bytes, got {len(payload)}")
    return Frame(msg_type, payload, flags)


def decode_bytes(data: bytes) -> Frame:
    import io

    return decode_frame(io.BytesIO(data))


# -- payloads -----------------------------------------------------------

def json_payload(obj) -> bytes:
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()


def parse_json(payload: bytes):
    try:
        return json.loads(payload.decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"bad JSON payload: {exc}") from None


@dataclass
class AssignPayload:
    model: str
    stage: int
    first: int  # 1-based inclusive block indices
    last: int
    next_hop: str  # "host:port" or "orchestrator"
    window: int
    backend: str
    stage_seconds: float
    output_bytes: int
    kernel: str = "busy"
    seed: int = 0

    def __post_init__(self):
        if self.first > self.last:
            raise ProtocolError(f"block range [{self.first}, {self.last}] is empty")
        if self.backend not in ("framed", "chatty"):
            raise ProtocolError(f"unknown backend {self.backend!r}")

    def encode(self) -> bytes:
        return json_payload(self.__dict__)

    @classmethod
    def decode(cls, payload: bytes) -> "AssignPayload":
        d = parse_json(payload)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ProtocolError(f"bad ASSIGN payload: {exc}") from None


_DATA = struct.Struct("!QHII")  # batch id, stage, body crc32, report length


@dataclass
class DataPayload:
    """BATCH, ACTIVATION and RESULT share one layout: ids, timing report, opaque body."""

    batch_id: int
    stage: int
    body: bytes
    report: list = field(default_factory=list)

    def encode(self, verbose: bool = False, msg_type: Optional[MsgType] = None) -> bytes:
        rep = json_payload(self.report)
        out = _DATA.pack(self.batch_id, self.stage, zlib.crc32(self.body), len(rep)) + rep + self.body
        if verbose:
            out = verbose_header(msg_type, self.batch_id, self.stage, len(self.body)) + out
        return out

    @classmethod
    def decode(cls, payload: bytes, verbose: bool = False) -> "DataPayload":
        if verbose:
            payload = strip_verbose_header(payload)
        if len(payload) < _DATA.size:
            raise ProtocolError("data payload shorter than its fixed header")
        batch_id, stage, crc, rep_len = _DATA.unpack_from(payload)
        rep_end = _DATA.size + rep_len
        report = parse_json(payload[_DATA.size:rep_end])
        body = payload[rep_end:]
        if zlib.crc32(body) != crc:
            raise ProtocolError(f"batch {batch_id}: body checksum mismatch")
        return cls(batch_id, stage, body, report)

    @property
    def checksum(self) -> int:
        return zlib.crc32(self.body)


def verbose_header(msg_type, batch_id: int, stage: int, body_len: int) -> bytes:
    """Self-describing envelope in the style of a generic RPC layer (always >= 64 bytes)."""
    envelope = {
        "rpc": "splitbench.pipeline/1",
        "method": MsgType(msg_type).name.lower() if msg_type is not None else "call",
        "batch_id": batch_id,
        "stage": stage,
        "body": {"encoding": "application/octet-stream", "length": body_len},
        "schema": ["batch_id:u64", "stage:u16", "crc32:u32", "report:json", "body:bytes"],
    }
    raw = json_payload(envelope)
    return struct.pack("!I", len(raw)) + raw


def strip_verbose_header(payload: bytes) -> bytes:
    if len(payload) < 4:
        raise ProtocolError("verbose header truncated")
    (n,) = struct.unpack_from("!I", payload)
    parse_json(payload[4:4 + n])
    return payload[4 + n:]


def make_body(seed: int, batch_id: int, stage: int, size: int) -> bytes:
    """Deterministic incompressible bytes standing in for a tensor."""
    return random.Random(f"{seed}:{batch_id}:{stage}").randbytes(size)
