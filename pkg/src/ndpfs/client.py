"""Host-side connection to a served device.

A `Connection` owns one stream socket.  A reader thread routes response
frames to the caller waiting on that request_id and queues unsolicited
notification frames.  Every frame in either direction is tallied in the
connection's `HostTrafficLedger`, which is the measuring point for
host/device traffic comparisons.
"""

from __future__ import annotations

import queue
import socket
import threading
from dataclasses import dataclass, field

from . import protocol as p
from .errors import NdpError, TransportClosed, raise_for_code
from .wire import FRAME_OVERHEAD, Frame, encode_frame, read_frame


@dataclass
class HostTrafficLedger:
    """Byte and frame counts crossing the transport boundary."""

    bytes_sent: int = 0
    bytes_received: int = 0
    frames_sent: int = 0
    frames_received: int = 0

    def add_sent(self, n: int) -> None:
        self.bytes_sent += n
        self.frames_sent += 1

    def add_received(self, n: int) -> None:
        self.bytes_received += n
        self.frames_received += 1

    @property
    def total_bytes(self) -> int:
        return self.bytes_sent + self.bytes_received

    def snapshot(self) -> "HostTrafficLedger":
        return HostTrafficLedger(self.bytes_sent, self.bytes_received,
                                 self.frames_sent, self.frames_received)


class _Slot:
    __slots__ = ("event", "frame")

    def __init__(self):
        self.event = threading.Event()
        self.frame: Frame | None = None


class Connection:
    def __init__(self, sock: socket.socket,
                 ledger: HostTrafficLedger | None = None):
        self.sock = sock
        self.ledger = ledger if ledger is not None else HostTrafficLedger()
        self._send_lock = threading.Lock()
        self._pending_lock = threading.Lock()
        self._pending: dict[int, _Slot] = {}
        self._next_id = 1
        self._closed = False
        self._death: NdpError | None = None
        self.notifications: queue.SimpleQueue = queue.SimpleQueue()
        self._stashed: list = []
        self._reader = threading.Thread(target=self._read_loop,
                                        name="ndpfs-reader", daemon=True)
        self._reader.start()

    # -- lifecycle --

    def close(self) -> None:
        self._closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def alive(self) -> bool:
        return self._death is None and not self._closed

    # -- frame plumbing --

    def _read_loop(self) -> None:
        while True:
            try:
                frame = read_frame(self.sock)
            except (NdpError, OSError) as exc:
                self._die(exc if isinstance(exc, NdpError)
                          else TransportClosed(str(exc)))
                return
            self.ledger.add_received(FRAME_OVERHEAD + len(frame.payload))
            if frame.is_notify:
                try:
                    self.notifications.put(p.decode_notify(frame.payload))
                except NdpError:
                    pass
                continue
            with self._pending_lock:
                slot = self._pending.pop(frame.request_id, None)
            if slot is not None:
                slot.frame = frame
                slot.event.set()

    def _die(self, exc: NdpError) -> None:
        self._death = exc
        with self._pending_lock:
            pending = list(self._pending.values())
            self._pending.clear()
        for slot in pending:
            slot.event.set()

    def call_raw(self, msg_type: int, payload: bytes,
                 timeout: float | None = None) -> Frame:
        """Send one request frame and block for its response frame."""
        if self._death is not None:
            raise TransportClosed("connection is dead") from self._death
        slot = _Slot()
        with self._pending_lock:
            request_id = self._next_id
            self._next_id += 1
            self._pending[request_id] = slot
        raw = encode_frame(msg_type, 0, request_id, payload)
        try:
            with self._send_lock:
                self.sock.sendall(raw)
        except OSError as exc:
            with self._pending_lock:
                self._pending.pop(request_id, None)
            raise TransportClosed(str(exc)) from None
        self.ledger.add_sent(len(raw))
        if not slot.event.wait(timeout):
            with self._pending_lock:
                self._pending.pop(request_id, None)
            raise TransportClosed(f"no response within {timeout}s")
        if slot.frame is None:
            raise TransportClosed("connection closed while waiting") \
                from self._death
        return slot.frame

    # -- request API --

    def call(self, req, timeout: float | None = None):
        """Round-trip a request dataclass; raises the remote error class."""
        msg_type, payload = p.encode_request(req)
        frame = self.call_raw(msg_type, payload, timeout)
        if frame.is_error:
            code, message = p.decode_error(frame.payload)
            raise_for_code(code, message)
        return p.decode_response(msg_type, frame.payload)

    # -- notifications --

    def next_notification(self, timeout: float | None = None):
        if self._stashed:
            return self._stashed.pop(0)
        try:
            return self.notifications.get(timeout=timeout)
        except queue.Empty:
            return None

    def wait_completion_notify(self, seq: int, timeout: float | None = None
                               ) -> p.CompletionRecord:
        """Block until the completion notification for `seq` arrives;
        other notifications are kept for later consumers."""
        for i, (kind, obj) in enumerate(self._stashed):
            if kind == "completion" and obj.seq == seq:
                return self._stashed.pop(i)[1]
        while True:
            try:
                kind, obj = self.notifications.get(timeout=timeout)
            except queue.Empty:
                raise TransportClosed(
                    f"no completion notification for seq {seq} within "
                    f"{timeout}s") from None
            if kind == "completion" and obj.seq == seq:
                return obj
            self._stashed.append((kind, obj))


def connect(address: str | tuple[str, int],
            ledger: HostTrafficLedger | None = None) -> Connection:
    """Open a TCP connection to "host:port" (or a (host, port) tuple)."""
    if isinstance(address, str):
        host, _, port = address.rpartition(":")
        address = (host or "127.0.0.1", int(port))
    return Connection(socket.create_connection(address), ledger)
