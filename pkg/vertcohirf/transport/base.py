from abc import ABC, abstractmethod
from typing import List, Tuple

from vertcohirf.models.messages import Phase, ProtocolMessage


class Endpoint(ABC):
    """One agent's view of the fully connected network"""

    def __init__(self, agent_id: int, peers: Tuple[int, ...]):
        self.agent_id = agent_id
        self.peers = tuple(sorted(p for p in peers if p != agent_id))

    @property
    def n_agents(self) -> int:
        return len(self.peers) + 1

    @abstractmethod
    def broadcast(self, msg: ProtocolMessage) -> None:
        """Deliver msg to every peer exactly once"""

    @abstractmethod
    def collect(self, round: int, phase: Phase) -> List[ProtocolMessage]:
        """Block until every peer's message for (round, phase) arrived; sender order"""

    @abstractmethod
    def close(self) -> None:
        pass


class Network(ABC):
    """Hands out endpoints and keeps the encoded frames that crossed the wire"""

    @abstractmethod
    def endpoint(self, agent_id: int) -> Endpoint:
        pass

    @abstractmethod
    def transcript(self) -> List[bytes]:
        """Every frame sent by a hosted agent or received by one, in (round, phase, sender) order"""

    @abstractmethod
    def received_by(self, agent_id: int) -> List[bytes]:
        """Frames delivered to agent_id, in (round, phase, sender) order"""

    @abstractmethod
    def close(self) -> None:
        pass

    def __enter__(self) -> "Network":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()
