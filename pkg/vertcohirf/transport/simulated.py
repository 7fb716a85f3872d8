"""
In-process network for deterministic simulation.

Messages are encoded on broadcast and decoded on collect, so a simulated
run moves exactly the bytes a TCP run would.
"""

import threading
from collections import defaultdict
from typing import DefaultDict, Dict, List, Optional, Tuple

from vertcohirf.core.config import settings
from vertcohirf.core.errors import ProtocolInvariantError, TransportError
from vertcohirf.core.logging import get_logger
from vertcohirf.models.messages import Phase, ProtocolMessage
from vertcohirf.transport.base import Endpoint, Network
from vertcohirf.transport.codec import decode_message, encode_message

logger = get_logger(__name__)

Key = Tuple[int, int, int]


class SimulatedNetwork(Network):
    def __init__(self, n_agents: int, collect_timeout: Optional[float] = None):
        if n_agents < 1:
            raise ValueError("a network needs at least one agent")
        self.n_agents = n_agents
        self.collect_timeout = collect_timeout or settings.collect_timeout
        self._cond = threading.Condition()
        self._closed = False
        self._sent: Dict[Key, bytes] = {}
        # agent -> (round, phase) -> sender -> frame
        self._inbox: Dict[int, DefaultDict[Tuple[int, int], Dict[int, bytes]]] = {
            a: defaultdict(dict) for a in range(n_agents)
        }
        self._delivered: Dict[int, Dict[Key, bytes]] = {a: {} for a in range(n_agents)}
        self._endpoints: Dict[int, "SimulatedEndpoint"] = {}

    def endpoint(self, agent_id: int) -> "SimulatedEndpoint":
        if not 0 <= agent_id < self.n_agents:
            raise ValueError(f"agent {agent_id} is not part of this network")
        if agent_id not in self._endpoints:
            self._endpoints[agent_id] = SimulatedEndpoint(self, agent_id)
        return self._endpoints[agent_id]

    def deliver(self, msg: ProtocolMessage) -> None:
        data = encode_message(msg)
        with self._cond:
            if self._closed:
                raise TransportError("network is closed", round=msg.round, peer=msg.sender)
            if msg.key in self._sent:
                raise ProtocolInvariantError(
                    f"agent {msg.sender} broadcast twice in round {msg.round} phase {msg.phase.name}"
                )
            self._sent[msg.key] = data
            for receiver in range(self.n_agents):
                if receiver == msg.sender:
                    continue
                self._inbox[receiver][(msg.round, int(msg.phase))][msg.sender] = data
                self._delivered[receiver][msg.key] = data
            self._cond.notify_all()

    def gather(self, agent_id: int, round: int, phase: Phase) -> List[ProtocolMessage]:
        expected = {a for a in range(self.n_agents) if a != agent_id}
        box_key = (round, int(phase))
        with self._cond:
            arrived = self._cond.wait_for(
                lambda: self._closed or expected.issubset(self._inbox[agent_id][box_key]),
                timeout=self.collect_timeout,
            )
            box = self._inbox[agent_id].pop(box_key, {})
            if self._closed:
                raise TransportError("network closed while collecting", round=round)
            if not arrived:
                missing = expected - set(box)
                logger.error(
                    "Collect timed out", agent=agent_id, round=round,
                    phase=phase.name, missing=sorted(missing)
                )
                raise TransportError(
                    f"agent {agent_id} timed out collecting {phase.name}",
                    round=round,
                    missing=missing,
                )
        return [decode_message(box[sender]) for sender in sorted(box)]

    def transcript(self) -> List[bytes]:
        with self._cond:
            return [self._sent[key] for key in sorted(self._sent)]

    def received_by(self, agent_id: int) -> List[bytes]:
        with self._cond:
            delivered = self._delivered[agent_id]
            return [delivered[key] for key in sorted(delivered)]

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


class SimulatedEndpoint(Endpoint):
    def __init__(self, network: SimulatedNetwork, agent_id: int):
        super().__init__(agent_id, tuple(range(network.n_agents)))
        self.network = network

    def broadcast(self, msg: ProtocolMessage) -> None:
        if msg.sender != self.agent_id:
            raise ProtocolInvariantError(
                f"endpoint of agent {self.agent_id} cannot send as agent {msg.sender}"
            )
        self.network.deliver(msg)

    def collect(self, round: int, phase: Phase) -> List[ProtocolMessage]:
        return self.network.gather(self.agent_id, round, phase)

    def close(self) -> None:
        pass
