"""Serves a Device over framed stream connections.

One thread per connection; requests on a connection are handled serially.
Semantic errors (unknown container, type mismatch, queue full, ...) come back
as error frames and leave the connection open.  Malformed frames (bad magic,
version, checksum, oversize payload) get an error frame when the header was
still readable, then the connection closes: after a framing fault the stream
can no longer be trusted.

Unsolicited frames go out as COMPLETION_NOTIFY with request_id 0: completion
notifications return to the connection that submitted the request with
interrupt notification; trigger-fired notifications fan out to every
connection.
"""

from __future__ import annotations

import socket
import threading

from . import protocol as p
from .device import Device
from .errors import NdpError, TransportClosed
from .wire import (
    FLAG_ERROR,
    FLAG_NOTIFY,
    FLAG_RESPONSE,
    MsgType,
    encode_frame,
    read_frame,
)


class Server:
    def __init__(self, device: Device):
        self.device = device

    def serve_connection(self, sock: socket.socket) -> None:
        """Handle one connection until it closes; blocks the calling thread."""
        send_lock = threading.Lock()

        def send(raw: bytes) -> None:
            with send_lock:
                sock.sendall(raw)

        def send_quietly(raw: bytes) -> None:
            try:
                send(raw)
            except OSError:
                pass

        def completion_sink(kind: str, rec) -> None:
            send_quietly(encode_frame(MsgType.COMPLETION_NOTIFY, FLAG_NOTIFY,
                                      0, p.encode_notify_completion(rec)))

        def on_broadcast(kind: str, payload) -> None:
            if kind == "trigger":
                send_quietly(encode_frame(MsgType.COMPLETION_NOTIFY,
                                          FLAG_NOTIFY, 0,
                                          p.encode_notify_trigger(payload)))

        self.device.add_listener(on_broadcast)
        try:
            while True:
                try:
                    frame = read_frame(sock)
                except TransportClosed:
                    return
                except NdpError as exc:
                    rid = exc.context.get("request_id")
                    if rid is not None:
                        send_quietly(self._error_frame(
                            exc.context.get("msg_type", 0), rid, exc))
                    return
                except OSError:
                    return
                if frame.is_response or frame.is_notify:
                    send_quietly(self._error_frame(
                        frame.msg_type, frame.request_id,
                        NdpError("unexpected response flags on a request")))
                    return
                try:
                    payload = self.device.handle_request(
                        frame.msg_type, frame.payload,
                        notify_sink=completion_sink)
                except NdpError as exc:
                    send_quietly(self._error_frame(frame.msg_type,
                                                   frame.request_id, exc))
                    continue
                except Exception as exc:      # never let a bug kill the loop
                    send_quietly(self._error_frame(
                        frame.msg_type, frame.request_id,
                        NdpError(f"internal error: {exc}")))
                    continue
                try:
                    send(encode_frame(frame.msg_type, FLAG_RESPONSE,
                                      frame.request_id, payload))
                except OSError:
                    return
        finally:
            self.device.remove_listener(on_broadcast)
            try:
                sock.close()
            except OSError:
                pass

    @staticmethod
    def _error_frame(msg_type: int, request_id: int, exc: NdpError) -> bytes:
        return encode_frame(msg_type, FLAG_RESPONSE | FLAG_ERROR, request_id,
                            p.encode_error(exc.code, str(exc)))


def loopback(device: Device) -> socket.socket:
    """In-process transport: returns the client end of a served socketpair."""
    server_end, client_end = socket.socketpair()
    threading.Thread(target=Server(device).serve_connection,
                     args=(server_end,), name="ndpfs-loopback",
                     daemon=True).start()
    return client_end


class TcpServer:
    """Accept loop for a listening TCP socket; one thread per connection."""

    def __init__(self, device: Device, host: str = "127.0.0.1", port: int = 0):
        self._server = Server(device)
        self._listener = socket.create_server((host, port))
        self.address: tuple[str, int] = self._listener.getsockname()[:2]
        self._closing = False
        self._accept_thread = threading.Thread(target=self._accept_loop,
                                               name="ndpfs-accept",
                                               daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._server.serve_connection,
                             args=(conn,), daemon=True).start()

    def close(self) -> None:
        self._closing = True
        try:
            # shutdown, not just close: it wakes a thread blocked in accept()
            self._listener.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self._listener.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=5)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
