from dataclasses import asdict, dataclass
from enum import IntEnum
from typing import Any, Dict, Tuple, Union

from vertcohirf.models.hierarchy import ClusterCode, LabelVector, SampleId


class Phase(IntEnum):
    """Communication phase of a round; values are the wire codes"""
    LABELS = 1
    MEDLISTS = 2


@dataclass(frozen=True)
class RankedList:
    """One agent's candidate medoids for one consensus cluster, best first"""

    cluster_key: ClusterCode
    candidates: Tuple[SampleId, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "cluster_key", tuple(int(c) for c in self.cluster_key))
        object.__setattr__(self, "candidates", tuple(int(c) for c in self.candidates))
        if len(set(self.candidates)) != len(self.candidates):
            raise ValueError("candidate list contains duplicates")


@dataclass(frozen=True)
class MedoidScore:
    candidate: SampleId
    score: int


Payload = Union[LabelVector, Tuple[RankedList, ...]]


@dataclass(frozen=True)
class ProtocolMessage:
    """A broadcast of one agent in one phase of one round"""

    sender: int
    round: int
    phase: Phase
    payload: Payload

    def __post_init__(self) -> None:
        object.__setattr__(self, "phase", Phase(self.phase))
        if self.phase is Phase.LABELS:
            if not isinstance(self.payload, LabelVector):
                raise TypeError("LABELS messages carry a LabelVector")
            if self.payload.agent != self.sender:
                raise ValueError("label vector agent must match the sender")
        else:
            if isinstance(self.payload, LabelVector):
                raise TypeError("MEDLISTS messages carry ranked lists")
            object.__setattr__(self, "payload", tuple(self.payload))
            if not all(isinstance(item, RankedList) for item in self.payload):
                raise TypeError("MEDLISTS payload items must be RankedList")

    @property
    def key(self) -> Tuple[int, int, int]:
        """Canonical ordering and uniqueness key"""
        return (self.round, int(self.phase), self.sender)

    @property
    def labels(self) -> LabelVector:
        assert isinstance(self.payload, LabelVector)
        return self.payload

    @property
    def ranked_lists(self) -> Tuple[RankedList, ...]:
        assert not isinstance(self.payload, LabelVector)
        return self.payload


@dataclass(frozen=True)
class BitReport:
    """Information bits exchanged in one round, with the parameters of its bound"""

    round: int
    label_bits: int
    medlist_bits: int
    n_agents: int
    n: int
    n_prev: int
    n_cur: int
    c_max: int
    n_s: int

    @property
    def total_bits(self) -> int:
        return self.label_bits + self.medlist_bits

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["total_bits"] = self.total_bits
        return data
