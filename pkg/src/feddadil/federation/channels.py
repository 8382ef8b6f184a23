"""Two interchangeable transports between the orchestrator and a client.

Both move encoded frames, so the float32 quantisation of the wire applies
equally to each and runs are bit-identical across transports.
"""
from __future__ import annotations

import logging
import socket
import threading

from .client import Client
from .codec import MsgType, ProtocolError, RoundMessage, decode_message, encode_message, read_frame

log = logging.getLogger(__name__)


class ClientFailure(Exception):
    pass


class InProcessChannel:
    """Calls the client directly on encoded bytes."""

    def __init__(self, client: Client):
        self.client = client
        self._reply: bytes | None = None
        self._error: Exception | None = None
        self.bytes_sent = 0

    def send(self, msg: RoundMessage) -> None:
        raw = encode_message(msg)
        self.bytes_sent += len(raw)
        try:
            reply = self.client.handle(decode_message(raw))
        except Exception as exc:
            self._error = exc
            return
        self._reply = None if reply is None else encode_message(reply)

    def receive(self) -> RoundMessage:
        if self._error is not None:
            exc, self._error = self._error, None
            raise ClientFailure(str(exc)) from exc
        if self._reply is None:
            raise ProtocolError("no reply pending")
        raw, self._reply = self._reply, None
        return decode_message(raw)

    def close(self) -> None:
        self.send(RoundMessage(MsgType.SHUTDOWN, 0))


def _recv_exact(sock: socket.socket):
    def read(n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            chunk = sock.recv(min(n - len(buf), 1 << 20))
            if not chunk:
                raise ConnectionError("stream closed")
            buf += chunk
        return bytes(buf)
    return read


def serve(sock: socket.socket, client: Client) -> None:
    """Client side of a stream connection: answer frames until Shutdown.

    A failing client closes its end, which the orchestrator sees as EOF.
    """
    read = _recv_exact(sock)
    with sock:
        while True:
            try:
                msg = read_frame(read)
                reply = client.handle(msg)
            except Exception:
                log.exception("client %s failed", client.client_id)
                return
            if msg.msg_type == MsgType.SHUTDOWN:
                return
            if reply is not None:
                sock.sendall(encode_message(reply))


class StreamChannel:
    """Framed byte stream with the client served on its own thread.

    Uses a connected socket pair by default; ``tcp=True`` goes through a
    loopback TCP connection instead.
    """

    def __init__(self, client: Client, tcp: bool = False):
        self.client = client
        if tcp:
            with socket.create_server(("127.0.0.1", 0)) as listener:
                self._sock = socket.create_connection(listener.getsockname())
                peer, _ = listener.accept()
        else:
            self._sock, peer = socket.socketpair()
        self._read = _recv_exact(self._sock)
        self._thread = threading.Thread(target=serve, args=(peer, client), daemon=True,
                                        name=f"client-{client.client_id}")
        self._thread.start()
        self.bytes_sent = 0

    def send(self, msg: RoundMessage) -> None:
        raw = encode_message(msg)
        self.bytes_sent += len(raw)
        try:
            self._sock.sendall(raw)
        except OSError:
            pass  # surfaced by receive()

    def receive(self) -> RoundMessage:
        try:
            return read_frame(self._read)
        except (ConnectionError, OSError) as exc:
            raise ClientFailure(f"connection lost: {exc}") from exc

    def close(self) -> None:
        self.send(RoundMessage(MsgType.SHUTDOWN, 0))
        self._thread.join(timeout=10)
        self._sock.close()


def open_channels(clients, transport: str = "inproc") -> dict:
    kinds = {"inproc": InProcessChannel, "stream": StreamChannel,
             "tcp": lambda c: StreamChannel(c, tcp=True)}
    if transport not in kinds:
        raise ValueError(f"unknown transport {transport!r} (choose from {sorted(kinds)})")
    return {c.client_id: kinds[transport](c) for c in clients}
