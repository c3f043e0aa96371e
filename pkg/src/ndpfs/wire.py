"""Framed host/device protocol: byte layout, message types, stream transport.

Frame layout (all integers little-endian):

    magic       4 bytes  "NDP1"
    version     u8       1
    msg_type    u8
    flags       u16      bit0 response, bit1 error, bit2 unsolicited notify
    request_id  u64
    payload_len u32      at most 16 MiB
    payload     payload_len bytes
    crc         u32      CRC-32 (IEEE) over every preceding byte

Responses echo the request's msg_type and request_id with bit0 set; error
responses also set bit1 and carry `u16 code + u32 len + utf8 message` as
payload.  Unsolicited frames (completion and trigger notifications) use
msg_type COMPLETION_NOTIFY, request_id 0 and bit2.
"""

from __future__ import annotations

import enum
import socket
import struct
import zlib
from dataclasses import dataclass

from .errors import (
    BadCrc,
    BadFrameVersion,
    BadMagic,
    PayloadTooLarge,
    TransportClosed,
    Truncated,
)

MAGIC = b"NDP1"
WIRE_VERSION = 1
MAX_PAYLOAD = 16 * 1024 * 1024
HEADER = struct.Struct("<4sBBHQI")      # magic, version, msg_type, flags,
HEADER_LEN = HEADER.size                # request_id, payload_len
FRAME_OVERHEAD = HEADER_LEN + 4         # header plus CRC trailer

FLAG_RESPONSE = 0x0001
FLAG_ERROR = 0x0002
FLAG_NOTIFY = 0x0004


class MsgType(enum.IntEnum):
    PING = 0x00
    OPEN = 0x01
    CLOSE = 0x02
    FREEZE = 0x03
    UNFREEZE = 0x04
    GET = 0x05
    READ = 0x06
    WRITE = 0x07
    SET = 0x08
    EXECUTE = 0x09
    SUBMIT_ASYNC = 0x0A
    POLL_COMPLETION = 0x0B
    DELAYED_ENQUEUE = 0x0C
    DELAYED_FLUSH = 0x0D
    TRIGGER_REGISTER = 0x0E
    TRIGGER_UNREGISTER = 0x0F
    METRICS = 0x10
    APPEND = 0x11
    CREATE_CONTAINER = 0x12
    DELETE = 0x13
    COMPLETION_NOTIFY = 0x14


@dataclass(frozen=True)
class Frame:
    msg_type: int
    flags: int
    request_id: int
    payload: bytes

    @property
    def is_response(self) -> bool:
        return bool(self.flags & FLAG_RESPONSE)

    @property
    def is_error(self) -> bool:
        return bool(self.flags & FLAG_ERROR)

    @property
    def is_notify(self) -> bool:
        return bool(self.flags & FLAG_NOTIFY)


def encode_frame(msg_type: int, flags: int, request_id: int,
                 payload: bytes = b"") -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload {len(payload)} exceeds {MAX_PAYLOAD}")
    head = HEADER.pack(MAGIC, WIRE_VERSION, msg_type, flags, request_id,
                       len(payload))
    body = head + payload
    return body + struct.pack("<I", zlib.crc32(body))


def decode_frame(data: bytes) -> Frame:
    """Decode one complete frame; the buffer must hold exactly one frame."""
    if len(data) < HEADER_LEN:
        raise Truncated(f"frame header needs {HEADER_LEN} bytes, got {len(data)}")
    magic, version, msg_type, flags, request_id, plen = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise BadFrameVersion(f"frame version {version}")
    if plen > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload {plen} exceeds {MAX_PAYLOAD}")
    total = HEADER_LEN + plen + 4
    if len(data) < total:
        raise Truncated(f"frame needs {total} bytes, got {len(data)}")
    if len(data) > total:
        raise Truncated(f"frame is {total} bytes, got {len(data)} (trailing)")
    (crc,) = struct.unpack_from("<I", data, HEADER_LEN + plen)
    if zlib.crc32(data[:HEADER_LEN + plen]) != crc:
        raise BadCrc("frame checksum mismatch")
    return Frame(msg_type, flags, request_id,
                 bytes(data[HEADER_LEN:HEADER_LEN + plen]))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise TransportClosed("peer closed the connection")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_frame(sock: socket.socket) -> Frame:
    """Read one frame from a stream socket, validating as bytes arrive.

    Once the header has parsed, errors carry ``request_id`` and ``msg_type``
    context so a server can still address an error response.
    """
    head = _recv_exact(sock, HEADER_LEN)
    magic, version, msg_type, flags, request_id, plen = HEADER.unpack(head)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != WIRE_VERSION:
        raise BadFrameVersion(f"frame version {version}")
    if plen > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload {plen} exceeds {MAX_PAYLOAD}",
                              request_id=request_id, msg_type=msg_type)
    rest = _recv_exact(sock, plen + 4)
    (crc,) = struct.unpack_from("<I", rest, plen)
    if zlib.crc32(head + rest[:plen]) != crc:
        raise BadCrc("frame checksum mismatch", request_id=request_id,
                     msg_type=msg_type)
    return Frame(msg_type, flags, request_id, rest[:plen])


def write_frame(sock: socket.socket, frame_bytes: bytes) -> None:
    sock.sendall(frame_bytes)
