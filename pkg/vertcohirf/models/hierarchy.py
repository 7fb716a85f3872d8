"""
Shared domain types and the parent-pointer hierarchy.

Samples are identified by integers in [0, n) that every agent agrees on.
The protocol shrinks the set of active medoids round after round; samples
that stop being active are attached to the medoid that absorbed them, and
those parent pointers form the Cluster Fusion Hierarchy (CFH).
"""

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, Iterator, List, Mapping, Sequence, Tuple

from vertcohirf.core.errors import CorruptionError, ProtocolInvariantError

SampleId = int
ClusterCode = Tuple[int, ...]


@dataclass(frozen=True)
class ActiveSet:
    """Ascending identifiers of the medoids still participating at an iteration"""

    ids: Tuple[SampleId, ...]
    iteration: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(int(i) for i in self.ids))
        if self.iteration < 0:
            raise ValueError("iteration must be non-negative")
        for prev, cur in zip(self.ids, self.ids[1:]):
            if cur <= prev:
                raise ValueError("active ids must be strictly ascending")
        if self.ids and self.ids[0] < 0:
            raise ValueError("sample ids must be non-negative")

    @classmethod
    def initial(cls, n: int) -> "ActiveSet":
        return cls(ids=tuple(range(n)), iteration=0)

    @classmethod
    def from_members(cls, members: Iterable[SampleId], iteration: int) -> "ActiveSet":
        return cls(ids=tuple(sorted(set(members))), iteration=iteration)

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self) -> Iterator[SampleId]:
        return iter(self.ids)

    def __contains__(self, item: object) -> bool:
        return item in set(self.ids)

    def same_members(self, other: "ActiveSet") -> bool:
        """Set equality, ignoring the iteration stamp"""
        return self.ids == other.ids


@dataclass(frozen=True)
class LabelVector:
    """Dense cluster labels of one agent, aligned with an ActiveSet"""

    agent: int
    labels: Tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        if any(v < 0 for v in self.labels):
            raise ValueError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return max(self.labels) + 1 if self.labels else 0


@dataclass(frozen=True)
class FusionEvent:
    """`child` stopped being active at `iteration` and was attached to `parent`"""

    child: SampleId
    parent: SampleId
    iteration: int


class ParentMap:
    """Parent pointers P over all n samples"""

    def __init__(self, parent: Mapping[SampleId, SampleId]):
        self._parent: Dict[SampleId, SampleId] = {int(k): int(v) for k, v in parent.items()}

    @classmethod
    def identity(cls, n: int) -> "ParentMap":
        return cls({i: i for i in range(n)})

    def __getitem__(self, item: SampleId) -> SampleId:
        return self._parent[item]

    def __len__(self) -> int:
        return len(self._parent)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParentMap):
            return NotImplemented
        return self._parent == other._parent

    def __repr__(self) -> str:
        moved = {k: v for k, v in self._parent.items() if k != v}
        return f"<ParentMap(n={len(self)}, attached={moved})>"

    def items(self) -> Iterable[Tuple[SampleId, SampleId]]:
        return sorted(self._parent.items())

    def as_dict(self) -> Dict[SampleId, SampleId]:
        return dict(self._parent)

    def fixed_points(self) -> List[SampleId]:
        return sorted(k for k, v in self._parent.items() if k == v)

    def root(self, sample: SampleId) -> SampleId:
        """Follow pointers to the fixed point above `sample`"""
        seen = set()
        current = sample
        while True:
            if current not in self._parent:
                raise CorruptionError(f"dangling parent pointer to {current}")
            nxt = self._parent[current]
            if nxt == current:
                return current
            if current in seen:
                raise CorruptionError(f"parent pointers cycle through {current}")
            seen.add(current)
            current = nxt


def update_parents(
    parents: ParentMap,
    consensus_labels: Sequence[int],
    k_prev: ActiveSet,
    k_new: ActiveSet,
) -> Tuple[ParentMap, List[FusionEvent]]:
    """Attach every sample of k_prev that is not in k_new to its cluster's medoid.

    Returns the new ParentMap and the fusion events of this iteration
    (stamped with k_new.iteration). The input map is not modified.
    """
    if len(consensus_labels) != len(k_prev):
        raise ProtocolInvariantError(
            f"{len(consensus_labels)} consensus labels for {len(k_prev)} active samples"
        )
    new_ids = set(k_new.ids)
    if not new_ids.issubset(k_prev.ids):
        raise ProtocolInvariantError("new medoids must be drawn from the previous active set")

    medoid_of: Dict[int, SampleId] = {}
    for sample, label in zip(k_prev.ids, consensus_labels):
        if sample in new_ids:
            if label in medoid_of:
                raise ProtocolInvariantError(
                    f"cluster {label} has two medoids: {medoid_of[label]} and {sample}"
                )
            medoid_of[label] = sample
    missing = set(consensus_labels) - set(medoid_of)
    if missing:
        raise ProtocolInvariantError(f"clusters without a medoid: {sorted(missing)}")

    updated = parents.as_dict()
    events: List[FusionEvent] = []
    for sample, label in zip(k_prev.ids, consensus_labels):
        if sample in new_ids:
            continue
        if updated[sample] != sample:
            raise ProtocolInvariantError(f"sample {sample} is already attached")
        updated[sample] = medoid_of[label]
        events.append(FusionEvent(sample, medoid_of[label], k_new.iteration))
    return ParentMap(updated), events


def get_final_labels(parents: ParentMap, roots: ActiveSet) -> List[int]:
    """Label each sample by the index of its transitive root in `roots`"""
    index = {root: i for i, root in enumerate(roots.ids)}
    if set(parents.fixed_points()) != set(index):
        raise CorruptionError("roots are not exactly the fixed points of the parent map")

    return [index[parents.root(sample)] for sample in range(len(parents))]


@dataclass
class CfhTree:
    """Forest of fusion events; roots are the final medoids"""

    nodes: Tuple[SampleId, ...]
    edges: Dict[SampleId, Tuple[SampleId, int]] = field(default_factory=dict)
    roots: Tuple[SampleId, ...] = ()

    def children(self) -> Dict[SampleId, List[Tuple[SampleId, int]]]:
        kids: Dict[SampleId, List[Tuple[SampleId, int]]] = {node: [] for node in self.nodes}
        for child, (parent, iteration) in sorted(self.edges.items()):
            kids[parent].append((child, iteration))
        return kids

    def root_of(self, node: SampleId) -> SampleId:
        while node in self.edges:
            node = self.edges[node][0]
        return node

    def leaves_by_root(self) -> Dict[SampleId, List[SampleId]]:
        groups: Dict[SampleId, List[SampleId]] = {root: [] for root in self.roots}
        for node in self.nodes:
            groups[self.root_of(node)].append(node)
        return groups

    def to_json(self) -> Dict[str, Any]:
        nodes = []
        for node in self.nodes:
            parent, iteration = self.edges.get(node, (None, None))
            nodes.append({"id": node, "parent": parent, "iteration": iteration})
        return {"nodes": nodes, "roots": list(self.roots)}

    @classmethod
    def from_json(cls, payload: Mapping[str, Any]) -> "CfhTree":
        edges = {}
        nodes = []
        for entry in payload["nodes"]:
            nodes.append(int(entry["id"]))
            if entry.get("parent") is not None:
                edges[int(entry["id"])] = (int(entry["parent"]), int(entry["iteration"]))
        return cls(nodes=tuple(nodes), edges=edges, roots=tuple(int(r) for r in payload["roots"]))

    def to_newick(self) -> str:
        """One Newick tree per root; branch lengths carry fusion iterations"""
        kids = self.children()

        def render(node: SampleId) -> str:
            if not kids[node]:
                return str(node)
            inner = ",".join(f"{render(child)}:{iteration}" for child, iteration in kids[node])
            return f"({inner}){node}"

        return "\n".join(f"{render(root)};" for root in self.roots)


def build_cfh(parents: ParentMap, fusion_log: Sequence[FusionEvent]) -> CfhTree:
    """Build the CFH from the final parent map and the fusion events of the run"""
    edges: Dict[SampleId, Tuple[SampleId, int]] = {}
    for event in fusion_log:
        if event.child in edges:
            raise CorruptionError(f"sample {event.child} fused twice")
        if event.child == event.parent:
            raise CorruptionError(f"sample {event.child} fused into itself")
        if parents[event.child] != event.parent:
            raise CorruptionError(
                f"log attaches {event.child} to {event.parent}, "
                f"parent map says {parents[event.child]}"
            )
        edges[event.child] = (event.parent, event.iteration)

    attached = {k for k, v in parents.items() if k != v}
    if attached != set(edges):
        raise CorruptionError(
            f"parent map and fusion log disagree on {sorted(attached ^ set(edges))}"
        )

    # a node absorbed at iteration e stops absorbing afterwards
    for child, (parent, iteration) in edges.items():
        if parent in edges and edges[parent][1] <= iteration:
            raise CorruptionError(
                f"{child} fused into {parent} at iteration {iteration}, "
                f"after {parent} itself was fused at iteration {edges[parent][1]}"
            )

    roots = tuple(parents.fixed_points())
    return CfhTree(nodes=tuple(range(len(parents))), edges=edges, roots=roots)
