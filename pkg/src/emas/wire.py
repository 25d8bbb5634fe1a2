"""TCP migration protocol: length-prefixed frames, hex-exact payloads.

Frame: 4-byte big-endian unsigned payload length, then a UTF-8 payload.
Payloads:

    HELLO <island-id>                      handshake, once per connection
    MIGRATE <agent-id> <energy> <dim> <h1> ... <hdim> <hfit>
    BYE                                    orderly shutdown

Each ``h`` field is exactly 16 lowercase hex digits holding the big-endian
IEEE-754 binary64 bits of one solution coordinate (and of the cached
fitness), so vectors survive the wire bit-for-bit.  Unknown verbs close the
connection with an error.
"""

from __future__ import annotations

import logging
import select
import socket
import struct
import threading

import numpy as np

from .core import StructuralError
from .islands import DeliveryFailure, MigrationEnvelope

logger = logging.getLogger(__name__)

MAX_FRAME = 1 << 24  # generous bound; a 10^5-dim agent is ~1.7 MB


class WireError(StructuralError):
    """Malformed frame or payload."""


def float_to_hex(value: float) -> str:
    return struct.pack(">d", value).hex()


def hex_to_float(text: str) -> float:
    if len(text) != 16:
        raise WireError(f"expected 16 hex digits, got '{text}'")
    try:
        raw = bytes.fromhex(text)
    except ValueError as exc:
        raise WireError(f"bad hex field '{text}'") from exc
    return struct.unpack(">d", raw)[0]


def encode_frame(payload: str) -> bytes:
    raw = payload.encode("utf-8")
    if len(raw) > MAX_FRAME:
        raise WireError(f"payload of {len(raw)} bytes exceeds frame limit")
    return struct.pack(">I", len(raw)) + raw


def read_frame(sock: socket.socket) -> str | None:
    """Read one frame; None on orderly EOF at a frame boundary."""
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack(">I", header)
    if length > MAX_FRAME:
        raise WireError(f"frame length {length} exceeds limit")
    if length == 0:
        return ""
    body = _recv_exact(sock, length)
    if body is None:
        raise WireError("connection closed mid-frame")
    return body.decode("utf-8")


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if buf:
                raise WireError("connection closed mid-frame")
            return None
        buf += chunk
    return buf


def encode_migrate(envelope: MigrationEnvelope) -> str:
    coords = " ".join(float_to_hex(float(v)) for v in envelope.values)
    return (f"MIGRATE {envelope.agent_id} {envelope.energy} "
            f"{envelope.values.size} {coords} {float_to_hex(envelope.cached_fitness)}")


def parse_migrate(payload: str, source: int, destination: int) -> MigrationEnvelope:
    parts = payload.split()
    if len(parts) < 4 or parts[0] != "MIGRATE":
        raise WireError(f"malformed MIGRATE payload: '{payload[:80]}'")
    try:
        agent_id = int(parts[1])
        energy = int(parts[2])
        dim = int(parts[3])
    except ValueError as exc:
        raise WireError(f"malformed MIGRATE numbers: '{payload[:80]}'") from exc
    if energy < 0 or dim < 1:
        raise WireError("MIGRATE carries invalid energy or dimension")
    if len(parts) != 4 + dim + 1:
        raise WireError(f"MIGRATE expects {dim} coordinates plus fitness, got"
                        f" {len(parts) - 4} fields")
    values = np.array([hex_to_float(h) for h in parts[4:4 + dim]], dtype=np.float64)
    fit = hex_to_float(parts[4 + dim])
    return MigrationEnvelope(agent_id, energy, values, fit, source, destination)


def encode_hello(island_id: int) -> str:
    return f"HELLO {island_id}"


def parse_hello(payload: str) -> int:
    parts = payload.split()
    if len(parts) != 2 or parts[0] != "HELLO":
        raise WireError(f"malformed HELLO: '{payload[:80]}'")
    try:
        return int(parts[1])
    except ValueError as exc:
        raise WireError(f"malformed HELLO id: '{payload[:80]}'") from exc


class TcpTransport:
    """Static-peer TCP transport for one island per process.

    Incoming agents are buffered thread-safely and drained by the engine at
    step boundaries.  Sending failures raise DeliveryFailure so the caller
    can put the agent back; nothing is silently lost.
    """

    def __init__(self, island_id: int, listen: tuple[str, int],
                 peers: dict[int, tuple[str, int]]):
        self.island_id = island_id
        self.peers = dict(peers)
        self._out: dict[int, socket.socket] = {}
        self._out_lock = threading.Lock()
        self._inbox: list[MigrationEnvelope] = []
        self._inbox_lock = threading.Lock()
        self._in_conns: list[socket.socket] = []
        self._in_lock = threading.Lock()
        self._server = socket.create_server(listen)
        self._server.settimeout(0.2)
        self._stopping = threading.Event()
        self._threads: list[threading.Thread] = []
        acceptor = threading.Thread(target=self._accept_loop,
                                    name=f"wire-accept-{island_id}", daemon=True)
        acceptor.start()
        self._threads.append(acceptor)

    @property
    def port(self) -> int:
        return self._server.getsockname()[1]

    # --- receiving ---------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = self._server.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            with self._in_lock:
                self._in_conns.append(conn)
            reader = threading.Thread(target=self._read_loop, args=(conn, addr),
                                      name=f"wire-read-{self.island_id}", daemon=True)
            reader.start()
            self._threads.append(reader)

    def _read_loop(self, conn: socket.socket, addr) -> None:
        source = -1
        try:
            payload = read_frame(conn)
            if payload is None:
                return
            source = parse_hello(payload)
            while True:
                payload = read_frame(conn)
                if payload is None or payload == "BYE":
                    return
                verb = payload.split(" ", 1)[0]
                if verb != "MIGRATE":
                    raise WireError(f"unknown verb '{verb}'")
                envelope = parse_migrate(payload, source, self.island_id)
                with self._inbox_lock:
                    self._inbox.append(envelope)
        except (WireError, OSError) as exc:
            logger.error("closing connection from %s (island %s): %s",
                         addr, source, exc)
        finally:
            conn.close()

    def drain_inbox(self) -> list[MigrationEnvelope]:
        with self._inbox_lock:
            out = self._inbox
            self._inbox = []
        out.sort(key=lambda e: (e.source, e.agent_id))
        return out

    # --- sending -----------------------------------------------------

    def _connection(self, destination: int) -> socket.socket:
        sock = self._out.get(destination)
        if sock is not None:
            return sock
        if destination not in self.peers:
            raise DeliveryFailure(f"island {destination} is not a known peer")
        try:
            sock = socket.create_connection(self.peers[destination], timeout=5.0)
            sock.sendall(encode_frame(encode_hello(self.island_id)))
        except OSError as exc:
            raise DeliveryFailure(f"cannot reach island {destination}: {exc}") from exc
        self._out[destination] = sock
        return sock

    @staticmethod
    def _socket_dead(sock: socket.socket) -> bool:
        # migration connections are one-directional: the peer never writes
        # back, so any readability means EOF or a reset
        try:
            readable, _, errored = select.select([sock], [], [sock], 0)
        except OSError:
            return True
        return bool(readable or errored)

    def send(self, envelope: MigrationEnvelope) -> None:
        with self._out_lock:
            sock = self._connection(envelope.destination)
            if self._socket_dead(sock):
                self._out.pop(envelope.destination, None)
                sock.close()
                sock = self._connection(envelope.destination)
            try:
                sock.sendall(encode_frame(encode_migrate(envelope)))
            except OSError as exc:
                self._out.pop(envelope.destination, None)
                sock.close()
                raise DeliveryFailure(
                    f"connection to island {envelope.destination} failed: {exc}") from exc

    def close(self) -> None:
        self._stopping.set()
        with self._out_lock:
            for sock in self._out.values():
                try:
                    sock.sendall(encode_frame("BYE"))
                except OSError:
                    pass
                sock.close()
            self._out.clear()
        # shut inbound connections down so blocked reader threads wake and
        # the kernel actually tears the connections down; plain close() on a
        # socket mid-recv leaves the connection alive until the recv returns
        with self._in_lock:
            for conn in self._in_conns:
                try:
                    conn.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    conn.close()
                except OSError:
                    pass
            self._in_conns.clear()
        # likewise wake a blocked accept() so the listener dies immediately
        # and late reconnect attempts are refused rather than backlogged
        try:
            self._server.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._server.close()
