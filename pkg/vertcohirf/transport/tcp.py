"""
TCP transport: every agent listens on its own address and keeps one
persistent outgoing connection per peer. Frames are u32-length-prefixed
encoded messages; there is no coordinator.
"""

import socket
import struct
import threading
import time
from collections import defaultdict
from typing import DefaultDict, Dict, Iterable, List, Mapping, Optional, Tuple

from vertcohirf.core.config import settings
from vertcohirf.core.errors import DecodeError, ProtocolInvariantError, TransportError
from vertcohirf.core.logging import get_logger
from vertcohirf.models.messages import Phase, ProtocolMessage
from vertcohirf.transport.base import Endpoint, Network
from vertcohirf.transport.codec import decode_message, encode_message, frame
from vertcohirf.transport.transcript import message_key

logger = get_logger(__name__)

Address = Tuple[str, int]
_PREFIX = struct.Struct("<I")


def _recv_exact(sock: socket.socket, size: int) -> Optional[bytes]:
    chunks = []
    remaining = size
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class TcpEndpoint(Endpoint):
    def __init__(
        self,
        agent_id: int,
        addresses: Mapping[int, Address],
        bind_host: Optional[str] = None,
        collect_timeout: Optional[float] = None,
    ):
        super().__init__(agent_id, tuple(addresses))
        self.addresses = dict(addresses)
        self.collect_timeout = collect_timeout or settings.collect_timeout
        self._cond = threading.Condition()
        self._closed = False
        self._error: Optional[Exception] = None
        self._inbox: DefaultDict[Tuple[int, int], Dict[int, bytes]] = defaultdict(dict)
        self._log: Dict[Tuple[int, int, int], bytes] = {}
        self._outgoing: Dict[int, socket.socket] = {}
        self._threads: List[threading.Thread] = []
        self._incoming: List[socket.socket] = []

        host, port = self.addresses[agent_id]
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((bind_host or settings.tcp_bind_address or host, port))
        self._server.listen(max(len(self.peers), 1))
        self.port = self._server.getsockname()[1]

    def start(self) -> None:
        """Start accepting peer connections"""
        thread = threading.Thread(
            target=self._accept_loop, name=f"tcp-accept-{self.agent_id}", daemon=True
        )
        thread.start()
        self._threads.append(thread)

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._server.accept()
            except OSError:
                return
            self._incoming.append(conn)
            reader = threading.Thread(
                target=self._read_loop, args=(conn,), name=f"tcp-read-{self.agent_id}", daemon=True
            )
            reader.start()
            self._threads.append(reader)

    def _read_loop(self, conn: socket.socket) -> None:
        while not self._closed:
            try:
                prefix = _recv_exact(conn, _PREFIX.size)
                if prefix is None:
                    return
                (length,) = _PREFIX.unpack(prefix)
                data = _recv_exact(conn, length)
                if data is None:
                    raise DecodeError("connection closed inside a frame", length)
                self._store(data)
            except OSError:
                return
            except Exception as e:
                logger.error("Dropping peer connection", agent=self.agent_id, error=str(e))
                with self._cond:
                    self._error = e
                    self._cond.notify_all()
                return

    def _store(self, data: bytes) -> None:
        round_, phase, sender = message_key(data)
        with self._cond:
            box = self._inbox[(round_, phase)]
            if sender in box or (round_, phase, sender) in self._log:
                raise ProtocolInvariantError(
                    f"agent {sender} broadcast twice in round {round_} phase {phase}"
                )
            box[sender] = data
            self._log[(round_, phase, sender)] = data
            self._cond.notify_all()

    def _connection(self, peer: int) -> socket.socket:
        if peer in self._outgoing:
            return self._outgoing[peer]
        address = self.addresses[peer]
        last_error: Optional[OSError] = None
        for _ in range(settings.tcp_connect_retries):
            try:
                sock = socket.create_connection(address, timeout=self.collect_timeout)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._outgoing[peer] = sock
                return sock
            except OSError as e:
                last_error = e
                time.sleep(settings.tcp_retry_interval)
        raise TransportError(f"peer {address[0]}:{address[1]} unreachable: {last_error}", peer=peer)

    def broadcast(self, msg: ProtocolMessage) -> None:
        if msg.sender != self.agent_id:
            raise ProtocolInvariantError(
                f"endpoint of agent {self.agent_id} cannot send as agent {msg.sender}"
            )
        data = encode_message(msg)
        with self._cond:
            if msg.key in self._log:
                raise ProtocolInvariantError(
                    f"agent {msg.sender} broadcast twice in round {msg.round} phase {msg.phase.name}"
                )
            self._log[msg.key] = data
        payload = frame(data)
        for peer in self.peers:
            try:
                self._connection(peer).sendall(payload)
            except OSError as e:
                self._outgoing.pop(peer, None)
                raise TransportError(f"sending to peer failed: {e}", round=msg.round, peer=peer) from e

    def collect(self, round: int, phase: Phase) -> List[ProtocolMessage]:
        expected = set(self.peers)
        box_key = (round, int(phase))
        with self._cond:
            arrived = self._cond.wait_for(
                lambda: self._closed
                or self._error is not None
                or expected.issubset(self._inbox[box_key]),
                timeout=self.collect_timeout,
            )
            box = self._inbox.pop(box_key, {})
            if self._error is not None:
                raise TransportError(f"peer stream failed: {self._error}", round=round)
            if self._closed:
                raise TransportError("endpoint closed while collecting", round=round)
            if not arrived:
                missing = expected - set(box)
                logger.error(
                    "Collect timed out", agent=self.agent_id, round=round,
                    phase=phase.name, missing=sorted(missing)
                )
                raise TransportError(
                    f"agent {self.agent_id} timed out collecting {phase.name}",
                    round=round,
                    missing=missing,
                )
        return [decode_message(box[sender]) for sender in sorted(box)]

    def frames(self) -> Dict[Tuple[int, int, int], bytes]:
        with self._cond:
            return dict(self._log)

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()
        for sock in [self._server, *self._outgoing.values(), *self._incoming]:
            try:
                sock.close()
            except OSError:
                pass
        self._outgoing.clear()


class TcpNetwork(Network):
    """Endpoints for the agents hosted by this process.

    All hosted endpoints bind before any connects, so port 0 in the peer
    table picks a free port for a hosted agent.
    """

    def __init__(
        self,
        addresses: Mapping[int, Address],
        hosted: Optional[Iterable[int]] = None,
        bind_host: Optional[str] = None,
        collect_timeout: Optional[float] = None,
    ):
        self.addresses: Dict[int, Address] = dict(addresses)
        hosted_ids = sorted(self.addresses if hosted is None else hosted)
        self._endpoints: Dict[int, TcpEndpoint] = {}
        for agent_id in hosted_ids:
            endpoint = TcpEndpoint(agent_id, self.addresses, bind_host, collect_timeout)
            self._endpoints[agent_id] = endpoint
            host, _ = self.addresses[agent_id]
            self.addresses[agent_id] = (host, endpoint.port)
        for endpoint in self._endpoints.values():
            endpoint.addresses = dict(self.addresses)
            endpoint.start()
        logger.info("TCP endpoints listening", hosted=hosted_ids, addresses=self.addresses)

    def endpoint(self, agent_id: int) -> TcpEndpoint:
        if agent_id not in self._endpoints:
            raise ValueError(f"agent {agent_id} is not hosted by this process")
        return self._endpoints[agent_id]

    def transcript(self) -> List[bytes]:
        merged: Dict[Tuple[int, int, int], bytes] = {}
        for endpoint in self._endpoints.values():
            merged.update(endpoint.frames())
        return [merged[key] for key in sorted(merged)]

    def received_by(self, agent_id: int) -> List[bytes]:
        frames = self.endpoint(agent_id).frames()
        return [frames[key] for key in sorted(frames) if key[2] != agent_id]

    def close(self) -> None:
        for endpoint in self._endpoints.values():
            endpoint.close()
