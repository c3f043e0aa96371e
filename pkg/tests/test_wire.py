"""Frame codec and stream transport behavior."""

import socket

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import reference
from ndpfs.errors import (
    BadCrc,
    BadFrameVersion,
    BadMagic,
    NdpError,
    PayloadTooLarge,
    TransportClosed,
    Truncated,
)
from ndpfs.wire import (
    FLAG_ERROR,
    FLAG_NOTIFY,
    FLAG_RESPONSE,
    FRAME_OVERHEAD,
    HEADER_LEN,
    MAX_PAYLOAD,
    MsgType,
    decode_frame,
    encode_frame,
    read_frame,
)


def ref_frame(msg_type: int, flags: int, request_id: int,
              payload: bytes = b"") -> bytes:
    head = (b"NDP1" + bytes([1, msg_type]) + reference.u16(flags)
            + reference.u64(request_id) + reference.u32(len(payload)))
    body = head + payload
    return body + reference.u32(reference.crc32(body))


class TestEncoding:
    def test_ping_request_bytes(self):
        body = bytes.fromhex(
            "4e445031" "01" "00" "0000" "0100000000000000" "00000000")
        expect = body + reference.u32(reference.crc32(body))
        assert encode_frame(MsgType.PING, 0, 1) == expect

    def test_overhead_constants(self):
        assert HEADER_LEN == 20
        assert FRAME_OVERHEAD == 24
        assert len(encode_frame(MsgType.PING, 0, 1)) == FRAME_OVERHEAD

    def test_matches_reference_with_payload(self):
        raw = encode_frame(MsgType.GET, FLAG_RESPONSE, 0x0102030405060708,
                           b"hello")
        assert raw == ref_frame(MsgType.GET, FLAG_RESPONSE,
                                0x0102030405060708, b"hello")

    def test_payload_cap(self):
        with pytest.raises(PayloadTooLarge):
            encode_frame(MsgType.READ, 0, 1, bytes(MAX_PAYLOAD + 1))

    def test_flag_properties(self):
        f = decode_frame(encode_frame(MsgType.SET, FLAG_RESPONSE | FLAG_ERROR, 7))
        assert f.is_response and f.is_error and not f.is_notify
        n = decode_frame(encode_frame(MsgType.COMPLETION_NOTIFY, FLAG_NOTIFY, 0))
        assert n.is_notify and not n.is_response


class TestDecoding:
    def test_roundtrip(self):
        raw = encode_frame(MsgType.EXECUTE, 0, 42, b"\x00\x01\xff")
        f = decode_frame(raw)
        assert (f.msg_type, f.flags, f.request_id, f.payload) == (
            MsgType.EXECUTE, 0, 42, b"\x00\x01\xff")

    def test_short_header(self):
        with pytest.raises(Truncated):
            decode_frame(b"NDP1\x01")

    def test_bad_magic(self):
        raw = bytearray(encode_frame(MsgType.PING, 0, 1))
        raw[0] = ord("X")
        with pytest.raises(BadMagic):
            decode_frame(bytes(raw))

    def test_bad_version(self):
        raw = bytearray(encode_frame(MsgType.PING, 0, 1))
        raw[4] = 2
        with pytest.raises(BadFrameVersion):
            decode_frame(bytes(raw))

    def test_oversize_payload_claim(self):
        head = (b"NDP1" + bytes([1, 0]) + reference.u16(0) + reference.u64(1)
                + reference.u32(MAX_PAYLOAD + 1))
        with pytest.raises(PayloadTooLarge):
            decode_frame(head + bytes(8))

    def test_corrupt_crc(self):
        raw = bytearray(encode_frame(MsgType.PING, 0, 1, b"abc"))
        raw[-1] ^= 0x01
        with pytest.raises(BadCrc):
            decode_frame(bytes(raw))

    def test_corrupt_payload(self):
        raw = bytearray(encode_frame(MsgType.PING, 0, 1, b"abc"))
        raw[HEADER_LEN] ^= 0x80
        with pytest.raises(BadCrc):
            decode_frame(bytes(raw))

    def test_trailing_bytes(self):
        raw = encode_frame(MsgType.PING, 0, 1)
        with pytest.raises(Truncated):
            decode_frame(raw + b"\x00")

    def test_every_single_byte_flip_is_rejected(self):
        raw = encode_frame(MsgType.GET, 0, 9, b"payload")
        for i in range(len(raw)):
            mutated = bytearray(raw)
            mutated[i] ^= 0xFF
            with pytest.raises(NdpError):
                decode_frame(bytes(mutated))


class TestStream:
    def _pair(self):
        a, b = socket.socketpair()
        return a, b

    def test_two_frames_back_to_back(self):
        a, b = self._pair()
        try:
            a.sendall(encode_frame(MsgType.PING, 0, 1)
                      + encode_frame(MsgType.METRICS, 0, 2, b"x"))
            f1 = read_frame(b)
            f2 = read_frame(b)
            assert f1.request_id == 1 and f2.request_id == 2
            assert f2.payload == b"x"
        finally:
            a.close()
            b.close()

    def test_peer_close_mid_frame(self):
        a, b = self._pair()
        try:
            a.sendall(encode_frame(MsgType.PING, 0, 1)[:10])
            a.close()
            with pytest.raises(TransportClosed):
                read_frame(b)
        finally:
            b.close()

    def test_bad_magic_over_stream(self):
        a, b = self._pair()
        try:
            a.sendall(b"JUNK" + bytes(20))
            with pytest.raises(BadMagic):
                read_frame(b)
        finally:
            a.close()
            b.close()

    def test_crc_checked_over_stream(self):
        a, b = self._pair()
        raw = bytearray(encode_frame(MsgType.PING, 0, 5, b"zz"))
        raw[HEADER_LEN] ^= 0x01
        try:
            a.sendall(bytes(raw))
            with pytest.raises(BadCrc):
                read_frame(b)
        finally:
            a.close()
            b.close()


@given(msg_type=st.integers(0, 255), flags=st.integers(0, 0xFFFF),
       request_id=st.integers(0, 2**64 - 1),
       payload=st.binary(max_size=512))
def test_roundtrip_property(msg_type, flags, request_id, payload):
    raw = encode_frame(msg_type, flags, request_id, payload)
    assert raw == ref_frame(msg_type, flags, request_id, payload)
    f = decode_frame(raw)
    assert (f.msg_type, f.flags, f.request_id, f.payload) == (
        msg_type, flags, request_id, payload)


@settings(max_examples=300)
@given(data=st.binary(max_size=64))
def test_garbage_never_crashes(data):
    try:
        decode_frame(data)
    except NdpError:
        pass
