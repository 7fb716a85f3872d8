"""
Byzantine behaviors. Attacks rewrite an agent's own outgoing messages only;
an attacker never looks at what honest agents sent.
"""

from typing import Any, Sequence

import numpy as np
from pydantic import ValidationError

from vertcohirf.core.errors import ConfigError
from vertcohirf.models.hierarchy import LabelVector
from vertcohirf.models.messages import RankedList
from vertcohirf.schemas import ByzantineBehavior, LabelAttack, RankAttack
from vertcohirf.services.base_clustering import densify


def parse_behavior(value: Any) -> ByzantineBehavior:
    """Accept a shorthand string ("rank_reverse", ...) or a mapping"""
    if isinstance(value, ByzantineBehavior):
        return value
    try:
        return ByzantineBehavior.model_validate(value)
    except ValidationError as e:
        raise ConfigError(f"invalid behavior {value!r}: {e}") from None


def _rng(behavior: ByzantineBehavior, salt: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng([behavior.seed, *[int(s) for s in salt]])


def apply_rank_attack(
    ranked: RankedList, behavior: ByzantineBehavior, salt: Sequence[int] = ()
) -> RankedList:
    attack = behavior.rank_attack
    if attack is None:
        raise ValueError(f"behavior {behavior.kind.value} is not a ranking attack")
    candidates = list(ranked.candidates)
    if attack is RankAttack.REVERSE:
        permuted = candidates[::-1]
    elif attack is RankAttack.PROMOTE_WORST:
        permuted = candidates[-1:] + candidates[:-1]
    else:
        order = _rng(behavior, salt).permutation(len(candidates))
        permuted = [candidates[i] for i in order]
    return RankedList(cluster_key=ranked.cluster_key, candidates=tuple(permuted))


def apply_label_attack(
    n_active: int, behavior: ByzantineBehavior, agent: int = 0, salt: Sequence[int] = ()
) -> LabelVector:
    attack = behavior.label_attack
    if attack is None:
        raise ValueError(f"behavior {behavior.kind.value} is not a labeling attack")
    if attack is LabelAttack.ALL_SAME:
        labels = [0] * n_active
    elif attack is LabelAttack.ALL_DISTINCT:
        labels = list(range(n_active))
    else:
        drawn = _rng(behavior, salt).integers(behavior.n_labels, size=n_active)
        labels = densify(drawn).tolist()
    return LabelVector(agent=agent, labels=tuple(labels))
