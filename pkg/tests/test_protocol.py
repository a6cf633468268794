import io
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splitbench.runtime.protocol import (
    HEADER_LEN,
    AssignPayload,
    BadMagic,
    ConnectionClosed,
    DataPayload,
    Frame,
    MsgType,
    ProtocolError,
    TruncatedFrame,
    UnknownMessageType,
    decode_bytes,
    decode_frame,
    encode_frame,
    make_body,
    verbose_header,
)


def test_shutdown_golden_bytes():
    assert encode_frame(Frame(MsgType.SHUTDOWN)) == bytes.fromhex("505049500107000000000000")


def test_ack_ok_golden_bytes():
    raw = encode_frame(Frame(MsgType.ACK, b"OK"))
    assert raw[:4] == b"PPIP"
    assert raw[4:6] == bytes([1, 6])
    assert raw[8:12] == bytes.fromhex("00000002")
    assert raw[12:] == bytes.fromhex("4f4b")


def test_header_is_big_endian():
    raw = encode_frame(Frame(MsgType.BATCH, b"x" * 0x0102, flags=0x0304))
    assert raw[6:8] == b"\x03\x04"
    assert raw[8:12] == b"\x00\x00\x01\x02"


def test_decode_shutdown():
    f = decode_bytes(bytes.fromhex("505049500107000000000000"))
    assert f == Frame(MsgType.SHUTDOWN, b"", 0)


def test_bad_magic():
    with pytest.raises(BadMagic):
        decode_bytes(b"\x00" + encode_frame(Frame(MsgType.ACK))[1:])


def test_unknown_type_and_version():
    raw = bytearray(encode_frame(Frame(MsgType.ACK)))
    raw[5] = 99
    with pytest.raises(UnknownMessageType):
        decode_bytes(bytes(raw))
    raw[5] = 6
    raw[4] = 2
    with pytest.raises(ProtocolError, match="version"):
        decode_bytes(bytes(raw))


def test_truncated_payload():
    raw = struct.pack("!4sBBHI", b"PPIP", 1, 4, 0, 100) + b"z" * 50
    with pytest.raises(TruncatedFrame):
        decode_bytes(raw)


def test_truncated_header_vs_clean_close():
    with pytest.raises(TruncatedFrame):
        decode_bytes(b"PPIP\x01")
    with pytest.raises(ConnectionClosed):
        decode_bytes(b"")


def test_stream_positioned_at_next_frame():
    frames = [Frame(MsgType.HELLO, b"{}"), Frame(MsgType.ACK, b"OK", 2), Frame(MsgType.SHUTDOWN)]
    stream = io.BytesIO(b"".join(encode_frame(f) for f in frames))
    assert [decode_frame(stream) for _ in frames] == frames
    with pytest.raises(ConnectionClosed):
        decode_frame(stream)


def test_encode_rejects_bad_flags():
    with pytest.raises(ProtocolError):
        encode_frame(Frame(MsgType.ACK, b"", 0x10000))


def test_unknown_msg_type_in_frame():
    with pytest.raises(ValueError):
        Frame(9)


frames = st.builds(
    Frame,
    st.sampled_from(list(MsgType)),
    st.binary(max_size=2048),
    st.integers(0, 0xFFFF),
)


@settings(max_examples=500)
@given(frames)
def test_round_trip(f):
    raw = encode_frame(f)
    assert len(raw) == HEADER_LEN + len(f.payload)
    assert decode_bytes(raw) == f


@settings(max_examples=300)
@given(frames, st.binary(min_size=4, max_size=4).filter(lambda m: m != b"PPIP"))
def test_corrupted_magic_always_rejected(f, magic):
    raw = magic + encode_frame(f)[4:]
    with pytest.raises(BadMagic):
        decode_bytes(raw)


def test_assign_payload_round_trip():
    a = AssignPayload("m", 1, 1, 3, "127.0.0.1:7001", 3, "framed", 0.25, 4096, "sleep", 7)
    assert AssignPayload.decode(a.encode()) == a
    with pytest.raises(ProtocolError):
        AssignPayload("m", 1, 4, 3, "orchestrator", 1, "framed", 0.1, 1)
    with pytest.raises(ProtocolError):
        AssignPayload.decode(b'{"model": "m"}')


@pytest.mark.parametrize("verbose", [False, True])
def test_data_payload_round_trip(verbose):
    d = DataPayload(42, 2, make_body(0, 42, 2, 1000), [{"stage": 1, "exec": 0.1}])
    raw = d.encode(verbose=verbose, msg_type=MsgType.ACTIVATION)
    assert DataPayload.decode(raw, verbose=verbose) == d


def test_data_payload_detects_corruption():
    raw = bytearray(DataPayload(1, 1, b"abcdef").encode())
    raw[-1] ^= 0xFF
    with pytest.raises(ProtocolError, match="checksum"):
        DataPayload.decode(bytes(raw))


def test_verbose_header_adds_at_least_64_bytes():
    assert len(verbose_header(MsgType.BATCH, 0, 0, 0)) >= 64


def test_bodies_are_seeded():
    assert make_body(1, 5, 0, 64) == make_body(1, 5, 0, 64)
    assert make_body(1, 5, 0, 64) != make_body(2, 5, 0, 64)
    assert make_body(1, 5, 0, 64) != make_body(1, 6, 0, 64)
    assert len(make_body(0, 0, 0, 12345)) == 12345
