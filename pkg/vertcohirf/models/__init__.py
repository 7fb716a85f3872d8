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

__all__ = [
    "ActiveSet",
    "BitReport",
    "CfhTree",
    "ClusterCode",
    "FusionEvent",
    "LabelVector",
    "MedoidScore",
    "ParentMap",
    "Phase",
    "ProtocolMessage",
    "RankedList",
    "SampleId",
    "build_cfh",
    "get_final_labels",
    "update_parents",
]
