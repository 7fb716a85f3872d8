"""
The decentralized consensus protocol.

Each round every agent clusters the active medoids on its own features and
broadcasts the labels (phase 1). Concatenating all agents' labels gives a
code per sample; samples with equal codes form a consensus cluster. Every
agent then ranks each cluster's members on its own features and broadcasts
the ranked identifier lists (phase 2). The candidate with the lowest summed
rank becomes the cluster's medoid; the other members are attached to it.
The loop ends when the set of medoids stops changing.

Only identifiers and labels ever leave an agent.
"""

from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from vertcohirf.core.config import settings
from vertcohirf.core.errors import (
    ProtocolDesyncError,
    ProtocolInvariantError,
    TransportError,
)
from vertcohirf.core.logging import get_logger
from vertcohirf.models.hierarchy import (
    ActiveSet,
    CfhTree,
    ClusterCode,
    FusionEvent,
    LabelVector,
    ParentMap,
    SampleId,
    build_cfh,
    get_final_labels,
    update_parents,
)
from vertcohirf.models.messages import (
    BitReport,
    MedoidScore,
    Phase,
    ProtocolMessage,
    RankedList,
)
from vertcohirf.schemas import HONEST, ByzantineBehavior, ClusteringStrategy, LocalStepConfig
from vertcohirf.services.adversary import apply_label_attack, apply_rank_attack
from vertcohirf.services.base_clustering import get_clusters
from vertcohirf.transport.accounting import bit_reports
from vertcohirf.transport.base import Endpoint, Network
from vertcohirf.transport.codec import decode_message
from vertcohirf.transport.transcript import canonical_order

logger = get_logger(__name__)


def concat_codes(label_vectors: Sequence[LabelVector]) -> List[ClusterCode]:
    """Per-sample tuple of every agent's label, in the given agent order"""
    if not label_vectors:
        raise ProtocolInvariantError("no label vectors to concatenate")
    lengths = {len(vector) for vector in label_vectors}
    if len(lengths) != 1:
        raise ProtocolDesyncError(
            "label vectors disagree on the active set size: "
            + ", ".join(f"agent {v.agent}: {len(v)}" for v in label_vectors)
        )
    return list(zip(*(vector.labels for vector in label_vectors)))


def codes_to_clusters(codes: Sequence[ClusterCode]) -> Tuple[List[int], List[List[int]]]:
    """Dense consensus labels and member positions, clusters by first occurrence"""
    index: Dict[ClusterCode, int] = {}
    labels: List[int] = []
    members: List[List[int]] = []
    for position, code in enumerate(codes):
        label = index.get(code)
        if label is None:
            label = index[code] = len(members)
            members.append([])
        labels.append(label)
        members[label].append(position)
    return labels, members


def rank_candidates_local(
    x_local: np.ndarray,
    members: Sequence[SampleId],
    n_s: Optional[int] = None,
    cluster_key: ClusterCode = (),
) -> RankedList:
    """Order members by their summed distance to the rest of the cluster.

    x_local holds all n samples on this agent's features; ties go to the
    smaller id and the list is cut to n_s entries.
    """
    if not members:
        raise ProtocolInvariantError("cannot rank an empty cluster")
    ids = np.asarray(members, dtype=np.int64)
    view = np.asarray(x_local, dtype=float)[ids]
    cost = cdist(view, view).sum(axis=1)
    order = np.lexsort((ids, cost))
    ranked = ids[order]
    if n_s is not None:
        ranked = ranked[:n_s]
    return RankedList(cluster_key=cluster_key, candidates=tuple(int(i) for i in ranked))


def medoid_scores(lists: Sequence[RankedList], n_s: Optional[int] = None) -> List[MedoidScore]:
    """Summed 1-based ranks; a candidate missing from a list is charged n_s + 1"""
    keys = {ranked.cluster_key for ranked in lists}
    if len(keys) > 1:
        raise ProtocolInvariantError(f"ranked lists of different clusters aggregated: {sorted(keys)}")
    if n_s is None:
        n_s = max((len(ranked.candidates) for ranked in lists), default=0)
    else:
        for ranked in lists:
            if len(ranked.candidates) > n_s:
                raise ProtocolInvariantError(
                    f"ranked list for cluster {ranked.cluster_key} has {len(ranked.candidates)} "
                    f"candidates, the cap is {n_s}"
                )
    union = sorted({c for ranked in lists for c in ranked.candidates})
    if not union:
        raise ProtocolInvariantError("no candidates to choose a medoid from")

    positions = [{c: i + 1 for i, c in enumerate(ranked.candidates)} for ranked in lists]
    scores = [
        MedoidScore(candidate=c, score=sum(rank.get(c, n_s + 1) for rank in positions))
        for c in union
    ]
    return sorted(scores, key=lambda s: (s.score, s.candidate))


def aggregate_medoid_scores(lists: Sequence[RankedList], n_s: Optional[int] = None) -> SampleId:
    return medoid_scores(lists, n_s)[0].candidate


@dataclass(frozen=True)
class RoundRecord:
    """What an agent settled on in one round"""

    round: int
    active: Tuple[SampleId, ...]
    consensus_labels: Tuple[int, ...]
    medoids: Tuple[SampleId, ...]


@dataclass
class Consensus:
    labels: List[int]
    clusters: List[List[SampleId]]
    keys: List[ClusterCode]


def consensus_from_labels(active: ActiveSet, vectors: Sequence[LabelVector]) -> Consensus:
    if any(len(v) != len(active) for v in vectors):
        raise ProtocolDesyncError(
            f"label vectors do not match the {len(active)} active samples: "
            + ", ".join(f"agent {v.agent}: {len(v)}" for v in vectors)
        )
    codes = concat_codes(vectors)
    labels, positions = codes_to_clusters(codes)
    ids = active.ids
    clusters = [[ids[p] for p in group] for group in positions]
    keys = [codes[group[0]] for group in positions]
    return Consensus(labels=labels, clusters=clusters, keys=keys)


def choose_medoids(
    consensus: Consensus,
    medlists: Sequence[Tuple[int, Sequence[RankedList]]],
    n_s: Optional[int] = None,
) -> List[SampleId]:
    """Aggregate every agent's ranked lists into one medoid per consensus cluster.

    With n_s set, a list longer than the cap is rejected and absent
    candidates are charged n_s + 1.
    """
    for sender, lists in medlists:
        if len(lists) != len(consensus.clusters):
            raise ProtocolDesyncError(
                f"agent {sender} ranked {len(lists)} clusters, expected {len(consensus.clusters)}"
            )
        for ranked, key, members in zip(lists, consensus.keys, consensus.clusters):
            if ranked.cluster_key != key:
                raise ProtocolDesyncError(
                    f"agent {sender} ranked cluster {ranked.cluster_key}, expected {key}"
                )
            if n_s is not None and len(ranked.candidates) > n_s:
                raise ProtocolInvariantError(
                    f"agent {sender} ranked {len(ranked.candidates)} candidates for cluster {key}, "
                    f"the cap is {n_s}"
                )
            stray = set(ranked.candidates) - set(members)
            if stray:
                raise ProtocolInvariantError(
                    f"agent {sender} proposed non-members {sorted(stray)} for cluster {key}"
                )
    return [
        aggregate_medoid_scores([lists[j] for _, lists in medlists], n_s)
        for j in range(len(consensus.clusters))
    ]


class AgentPhase(str, Enum):
    LOCAL_CLUSTER = "local_cluster"
    AWAIT_LABELS = "await_labels"
    RANK_MEDOIDS = "rank_medoids"
    AWAIT_MEDLISTS = "await_medlists"
    ADVANCE = "advance"
    DONE = "done"


@dataclass
class AgentState:
    agent_id: int
    x: np.ndarray
    strategy: ClusteringStrategy
    step_cfg: LocalStepConfig = field(default_factory=LocalStepConfig)
    behavior: ByzantineBehavior = HONEST
    active: Optional[ActiveSet] = None
    parents: Optional[ParentMap] = None
    phase: AgentPhase = AgentPhase.LOCAL_CLUSTER

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 2 or self.x.shape[1] < 1:
            raise ValueError(f"agent {self.agent_id} needs an n x p feature matrix with p >= 1")
        n = self.x.shape[0]
        if self.active is None:
            self.active = ActiveSet.initial(n)
        if self.parents is None:
            self.parents = ParentMap.identity(n)

    @property
    def n(self) -> int:
        return self.x.shape[0]


class ProtocolAgent:
    """Runs one agent's side of the protocol over an endpoint"""

    def __init__(
        self,
        state: AgentState,
        endpoint: Endpoint,
        run_seed: int = 0,
        max_iter: Optional[int] = None,
        n_s: Optional[int] = None,
    ):
        if endpoint.agent_id != state.agent_id:
            raise ValueError("endpoint and state belong to different agents")
        self.state = state
        self.endpoint = endpoint
        self.run_seed = run_seed
        self.max_iter = max_iter or settings.default_max_iter
        self.n_s = n_s
        self.round = 1
        self.history: List[RoundRecord] = []
        self.fusion_log: List[FusionEvent] = []
        self._own_labels: Optional[LabelVector] = None
        self._own_lists: Tuple[RankedList, ...] = ()
        self._consensus: Optional[Consensus] = None
        self._previous: Optional[ActiveSet] = None
        self._log = logger.bind(agent=state.agent_id)

    @property
    def agent_id(self) -> int:
        return self.state.agent_id

    @property
    def done(self) -> bool:
        return self.state.phase is AgentPhase.DONE

    def local_cluster(self) -> None:
        state = self.state
        active = state.active
        if state.behavior.label_attack is not None:
            vector = apply_label_attack(
                len(active), state.behavior, agent=self.agent_id, salt=(self.round,)
            )
        else:
            labels = get_clusters(
                state.x[list(active.ids)],
                state.strategy,
                state.step_cfg,
                seed=(self.run_seed, self.agent_id, self.round),
            )
            vector = LabelVector(agent=self.agent_id, labels=tuple(int(v) for v in labels))
        self._own_labels = vector
        self.endpoint.broadcast(ProtocolMessage(self.agent_id, self.round, Phase.LABELS, vector))
        state.phase = AgentPhase.AWAIT_LABELS

    def await_labels(self) -> None:
        received = self.endpoint.collect(self.round, Phase.LABELS)
        vectors = sorted([self._own_labels, *(m.labels for m in received)], key=lambda v: v.agent)
        self._consensus = consensus_from_labels(self.state.active, vectors)
        self._log.debug(
            "Consensus clusters formed", round=self.round, n_clusters=len(self._consensus.clusters)
        )
        self.state.phase = AgentPhase.RANK_MEDOIDS

    def rank_medoids(self) -> None:
        state = self.state
        lists = []
        for index, (key, members) in enumerate(zip(self._consensus.keys, self._consensus.clusters)):
            ranked = rank_candidates_local(state.x, members, self.n_s, cluster_key=key)
            if state.behavior.rank_attack is not None:
                ranked = apply_rank_attack(ranked, state.behavior, salt=(self.round, index))
            lists.append(ranked)
        self._own_lists = tuple(lists)
        self.endpoint.broadcast(
            ProtocolMessage(self.agent_id, self.round, Phase.MEDLISTS, self._own_lists)
        )
        state.phase = AgentPhase.AWAIT_MEDLISTS

    def await_medlists(self) -> None:
        state = self.state
        received = self.endpoint.collect(self.round, Phase.MEDLISTS)
        medlists = sorted(
            [(self.agent_id, self._own_lists), *((m.sender, m.ranked_lists) for m in received)],
            key=lambda item: item[0],
        )
        medoids = choose_medoids(self._consensus, medlists, self.n_s)
        new_active = ActiveSet.from_members(medoids, self.round)
        state.parents, events = update_parents(
            state.parents, self._consensus.labels, state.active, new_active
        )
        self.fusion_log.extend(events)
        self.history.append(
            RoundRecord(
                round=self.round,
                active=state.active.ids,
                consensus_labels=tuple(self._consensus.labels),
                medoids=tuple(medoids),
            )
        )
        self._previous, state.active = state.active, new_active
        state.phase = AgentPhase.ADVANCE

    def advance(self) -> None:
        if self.state.active.same_members(self._previous) or self.round >= self.max_iter:
            self._log.debug("Agent finished", rounds=self.round, n_medoids=len(self.state.active))
            self.state.phase = AgentPhase.DONE
        else:
            self.round += 1
            self.state.phase = AgentPhase.LOCAL_CLUSTER

    def step(self) -> None:
        handlers = {
            AgentPhase.LOCAL_CLUSTER: self.local_cluster,
            AgentPhase.AWAIT_LABELS: self.await_labels,
            AgentPhase.RANK_MEDOIDS: self.rank_medoids,
            AgentPhase.AWAIT_MEDLISTS: self.await_medlists,
            AgentPhase.ADVANCE: self.advance,
        }
        if self.done:
            return
        handlers[self.state.phase]()

    def run(self) -> "ProtocolAgent":
        while not self.done:
            self.step()
        return self

    def final_labels(self) -> List[int]:
        return get_final_labels(self.state.parents, self.state.active)

    def cfh(self) -> CfhTree:
        return build_cfh(self.state.parents, self.fusion_log)


@dataclass
class ProtocolResult:
    labels: List[int]
    cfh: CfhTree
    bit_reports: List[BitReport]
    rounds: int
    fusion_log: List[FusionEvent]
    active_history: List[Tuple[SampleId, ...]]
    records: List[RoundRecord] = field(default_factory=list)
    frames: List[bytes] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels))

    @property
    def final_medoids(self) -> Tuple[SampleId, ...]:
        return self.cfh.roots


def check_agreement(agents: Sequence[ProtocolAgent]) -> None:
    """All honest agents must hold the same per-round history"""
    honest = [a for a in agents if a.state.behavior.is_honest]
    if len(honest) < 2:
        return
    reference = honest[0]
    for agent in honest[1:]:
        if agent.history != reference.history:
            diverged = next(
                (
                    mine.round
                    for mine, theirs in zip(agent.history, reference.history)
                    if mine != theirs
                ),
                min(len(agent.history), len(reference.history)) + 1,
            )
            raise ProtocolDesyncError(
                f"agents {reference.agent_id} and {agent.agent_id} diverged at round {diverged}"
            )


def result_from_agent(
    agent: ProtocolAgent, frames: Sequence[bytes], n_agents: int
) -> ProtocolResult:
    return ProtocolResult(
        labels=agent.final_labels(),
        cfh=agent.cfh(),
        bit_reports=bit_reports(frames, n_agents=n_agents, n=agent.state.n),
        rounds=len(agent.history),
        fusion_log=list(agent.fusion_log),
        active_history=[record.active for record in agent.history] + [agent.state.active.ids],
        records=list(agent.history),
        frames=list(frames),
    )


def _drive_sequential(agents: Sequence[ProtocolAgent]) -> None:
    while not all(agent.done for agent in agents):
        for agent in agents:
            agent.step()


def _drive_concurrent(agents: Sequence[ProtocolAgent], network: Network) -> None:
    with ThreadPoolExecutor(max_workers=len(agents), thread_name_prefix="agent") as pool:
        futures = [pool.submit(agent.run) for agent in agents]
        wait(futures, return_when=FIRST_EXCEPTION)
        if any(f.done() and f.exception() is not None for f in futures):
            network.close()
        wait(futures)
    errors = [
        (agent.agent_id, future.exception())
        for agent, future in zip(agents, futures)
        if future.exception() is not None
    ]
    if errors:
        # non-transport failures first: the others are usually aborted collects
        errors.sort(key=lambda item: (isinstance(item[1], TransportError), item[0]))
        raise errors[0][1]


def run_protocol(
    states: Sequence[AgentState],
    network: Network,
    max_iter: Optional[int] = None,
    mode: str = "sequential",
    n_s: Optional[int] = None,
    run_seed: int = 0,
) -> ProtocolResult:
    """Run every agent to termination and return the outcome seen by the first honest agent"""
    if not states:
        raise ProtocolInvariantError("a run needs at least one agent")
    sizes = {state.n for state in states}
    if len(sizes) != 1:
        raise ProtocolDesyncError(f"agents disagree on the sample count: {sorted(sizes)}")
    ids = [state.agent_id for state in states]
    if ids != list(range(len(states))):
        raise ProtocolInvariantError(f"agent ids must be 0..A-1 in order, got {ids}")

    agents = [
        ProtocolAgent(state, network.endpoint(state.agent_id), run_seed, max_iter, n_s)
        for state in states
    ]
    logger.info(
        "Protocol run started",
        n_agents=len(agents),
        n=sizes.pop(),
        mode=mode,
        run_seed=run_seed,
    )
    if mode == "sequential":
        _drive_sequential(agents)
    elif mode == "concurrent":
        _drive_concurrent(agents, network)
    else:
        raise ValueError(f"unknown driver mode {mode!r}")

    check_agreement(agents)
    reporter = next((a for a in agents if a.state.behavior.is_honest), agents[0])
    result = result_from_agent(reporter, network.transcript(), len(agents))
    logger.info(
        "Protocol run finished",
        rounds=result.rounds,
        n_clusters=result.n_clusters,
        total_bits=sum(r.total_bits for r in result.bit_reports),
    )
    return result


def replay(frames: Sequence[bytes], n_s: Optional[int] = None) -> ProtocolResult:
    """Rebuild a run from its transcript alone, single-threaded.

    n_s must be the cap the run used; left unset, the longest list of each
    cluster sets the missing-candidate charge.

    Identifiers, labels and ranked lists are all the reference driver needs;
    no feature values are involved.
    """
    messages = sorted((decode_message(data) for data in frames), key=lambda m: m.key)
    if not messages:
        raise ProtocolInvariantError("cannot replay an empty transcript")

    by_round: Dict[int, Dict[Phase, List[ProtocolMessage]]] = {}
    for msg in messages:
        by_round.setdefault(msg.round, {Phase.LABELS: [], Phase.MEDLISTS: []})[msg.phase].append(msg)

    rounds = sorted(by_round)
    if rounds != list(range(1, len(rounds) + 1)):
        raise ProtocolInvariantError(f"transcript rounds are not 1..E: {rounds}")
    first_labels = by_round[1][Phase.LABELS]
    if not first_labels:
        raise ProtocolInvariantError("transcript has no first-round labels")
    n_agents = len(first_labels)
    n = len(first_labels[0].labels)

    active = ActiveSet.initial(n)
    parents = ParentMap.identity(n)
    fusion_log: List[FusionEvent] = []
    records: List[RoundRecord] = []
    history: List[Tuple[SampleId, ...]] = []
    for round_ in rounds:
        phases = by_round[round_]
        senders = [sorted(m.sender for m in phases[p]) for p in (Phase.LABELS, Phase.MEDLISTS)]
        if any(s != list(range(n_agents)) for s in senders):
            raise ProtocolInvariantError(f"round {round_} is missing messages: {senders}")
        consensus = consensus_from_labels(active, [m.labels for m in phases[Phase.LABELS]])
        medoids = choose_medoids(
            consensus, [(m.sender, m.ranked_lists) for m in phases[Phase.MEDLISTS]], n_s
        )
        new_active = ActiveSet.from_members(medoids, round_)
        parents, events = update_parents(parents, consensus.labels, active, new_active)
        fusion_log.extend(events)
        records.append(RoundRecord(round_, active.ids, tuple(consensus.labels), tuple(medoids)))
        history.append(active.ids)
        active = new_active
    history.append(active.ids)

    return ProtocolResult(
        labels=get_final_labels(parents, active),
        cfh=build_cfh(parents, fusion_log),
        bit_reports=bit_reports(frames, n_agents=n_agents, n=n),
        rounds=len(rounds),
        fusion_log=fusion_log,
        active_history=history,
        records=records,
        frames=canonical_order(frames),
    )
