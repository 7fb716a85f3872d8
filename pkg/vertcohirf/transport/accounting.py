"""
Information-bit accounting of protocol rounds.

The counts are information-theoretic (ceil(log2) bits per label or
identifier, per recipient) and ignore the byte-aligned framing of the
wire format.
"""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from vertcohirf.core.errors import AccountingError
from vertcohirf.models.hierarchy import LabelVector
from vertcohirf.models.messages import BitReport, Phase, ProtocolMessage, RankedList
from vertcohirf.transport.codec import decode_message


def clog2(value: int) -> int:
    """ceil(log2(max(value, 2)))"""
    return (max(int(value), 2) - 1).bit_length()


@dataclass
class RoundTranscript:
    """All messages of one round"""

    round: int
    n_agents: int
    n: int
    labels: Dict[int, LabelVector] = field(default_factory=dict)
    medlists: Dict[int, Tuple[RankedList, ...]] = field(default_factory=dict)

    def add(self, msg: ProtocolMessage) -> None:
        if msg.round != self.round:
            raise AccountingError(f"message of round {msg.round} in transcript of round {self.round}")
        if msg.phase is Phase.LABELS:
            self.labels[msg.sender] = msg.labels
        else:
            self.medlists[msg.sender] = msg.ranked_lists

    def missing(self) -> List[Tuple[str, int]]:
        expected = range(self.n_agents)
        gaps = [("labels", a) for a in expected if a not in self.labels]
        gaps += [("medlists", a) for a in expected if a not in self.medlists]
        return gaps


def account_bits(transcript: RoundTranscript) -> BitReport:
    gaps = transcript.missing()
    if gaps:
        raise AccountingError(f"round {transcript.round} transcript is incomplete: missing {gaps}")

    fan_out = transcript.n_agents - 1
    n_prev = len(next(iter(transcript.labels.values())))
    if any(len(vector) != n_prev for vector in transcript.labels.values()):
        raise AccountingError(f"label vectors of round {transcript.round} differ in length")

    label_bits = sum(
        fan_out * n_prev * clog2(vector.n_clusters) for vector in transcript.labels.values()
    )
    id_bits = clog2(transcript.n)
    medlist_bits = sum(
        fan_out * sum(len(ranked.candidates) for ranked in lists) * id_bits
        for lists in transcript.medlists.values()
    )
    c_max = max(vector.n_clusters for vector in transcript.labels.values())
    n_cur = max(len(lists) for lists in transcript.medlists.values())
    n_s = max(
        (len(ranked.candidates) for lists in transcript.medlists.values() for ranked in lists),
        default=0,
    )
    return BitReport(
        round=transcript.round,
        label_bits=label_bits,
        medlist_bits=medlist_bits,
        n_agents=transcript.n_agents,
        n=transcript.n,
        n_prev=n_prev,
        n_cur=n_cur,
        c_max=c_max,
        n_s=n_s,
    )


def communication_bound(a: int, n: int, n_prev: int, n_cur: int, c_max: int, n_s: int) -> int:
    """A(A-1) [n_prev ceil(log2 c_max) + n_cur n_s ceil(log2 n)], log arguments clamped to 2"""
    return a * (a - 1) * (n_prev * clog2(c_max) + n_cur * n_s * clog2(n))


def report_bound(report: BitReport) -> int:
    return communication_bound(
        report.n_agents, report.n, report.n_prev, report.n_cur, report.c_max, report.n_s
    )


def group_rounds(
    messages: Iterable[ProtocolMessage], n_agents: int, n: int
) -> List[RoundTranscript]:
    rounds: Dict[int, RoundTranscript] = {}
    for msg in messages:
        if msg.round not in rounds:
            rounds[msg.round] = RoundTranscript(round=msg.round, n_agents=n_agents, n=n)
        rounds[msg.round].add(msg)
    return [rounds[r] for r in sorted(rounds)]


def bit_reports(
    frames: Sequence[bytes], n_agents: Optional[int] = None, n: Optional[int] = None
) -> List[BitReport]:
    """Account every round of an encoded transcript.

    n_agents and n default to the senders and label count of the first round.
    """
    messages = [decode_message(data) for data in frames]
    if not messages:
        return []
    if n_agents is None:
        first = min(m.round for m in messages)
        n_agents = len({m.sender for m in messages if m.round == first})
    if n is None:
        by_round = defaultdict(list)
        for m in messages:
            if m.phase is Phase.LABELS:
                by_round[m.round].append(len(m.labels))
        n = max(by_round[min(by_round)])
    return [account_bits(t) for t in group_rounds(messages, n_agents, n)]
