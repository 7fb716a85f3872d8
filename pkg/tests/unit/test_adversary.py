from itertools import permutations

import numpy as np
import pytest

from vertcohirf.core.errors import ConfigError
from vertcohirf.models.hierarchy import ActiveSet, LabelVector
from vertcohirf.models.messages import RankedList
from vertcohirf.schemas import BehaviorKind, ByzantineBehavior
from vertcohirf.services.adversary import apply_label_attack, apply_rank_attack, parse_behavior
from vertcohirf.services.consensus import aggregate_medoid_scores, consensus_from_labels


class TestParseBehavior:
    """Test behavior shorthands"""

    def test_shorthand(self):
        behavior = parse_behavior("rank_reverse")
        assert behavior.kind is BehaviorKind.RANK_PERMUTE
        assert behavior.rank_attack.value == "reverse"
        assert behavior.label_attack is None

    def test_mapping(self):
        behavior = parse_behavior({"kind": "label_attack", "strategy": "all_same", "seed": 3})
        assert behavior.label_attack.value == "all_same"
        assert behavior.seed == 3

    def test_honest_default(self):
        assert parse_behavior("honest").is_honest

    @pytest.mark.parametrize(
        "value",
        ["rank_sideways", {"kind": "rank_permute", "strategy": "all_same"}, {"kind": "honest", "strategy": "reverse"}],
    )
    def test_invalid(self, value):
        with pytest.raises(ConfigError):
            parse_behavior(value)


class TestRankAttack:
    """Test phase-2 ranking permutations"""

    ranked = RankedList(cluster_key=(1, 0), candidates=(4, 8, 15))

    def test_reverse(self):
        attacked = apply_rank_attack(self.ranked, parse_behavior("rank_reverse"))
        assert attacked.candidates == (15, 8, 4)
        assert attacked.cluster_key == (1, 0)

    def test_promote_worst(self):
        attacked = apply_rank_attack(self.ranked, parse_behavior("rank_promote_worst"))
        assert attacked.candidates == (15, 4, 8)

    def test_shuffle_is_seeded(self):
        behavior = ByzantineBehavior(kind="rank_permute", strategy="random_shuffle", seed=7)
        first = apply_rank_attack(self.ranked, behavior, salt=(2, 0))
        second = apply_rank_attack(self.ranked, behavior, salt=(2, 0))

        order = np.random.default_rng([7, 2, 0]).permutation(3)
        assert first == second
        assert first.candidates == tuple(self.ranked.candidates[i] for i in order)

    def test_honest_behavior_is_not_an_attack(self):
        with pytest.raises(ValueError):
            apply_rank_attack(self.ranked, ByzantineBehavior())

    def test_single_attacker_cannot_unseat_unanimous_honest_top(self):
        honest = RankedList((0,), (1, 5, 9))
        for order in permutations(honest.candidates):
            attacker = RankedList((0,), order)
            assert aggregate_medoid_scores([honest, honest, attacker]) == 1


class TestLabelAttack:
    """Test phase-1 label forgeries"""

    def test_all_same(self):
        vector = apply_label_attack(4, parse_behavior("label_all_same"), agent=2)
        assert vector == LabelVector(2, (0, 0, 0, 0))

    def test_all_distinct(self):
        vector = apply_label_attack(4, parse_behavior("label_all_distinct"))
        assert vector.labels == (0, 1, 2, 3)

    def test_random_labels_dense_and_seeded(self):
        behavior = ByzantineBehavior(kind="label_attack", strategy="random_labels", n_labels=3, seed=1)
        first = apply_label_attack(50, behavior, salt=(1,))
        assert first == apply_label_attack(50, behavior, salt=(1,))
        assert set(first.labels) == {0, 1, 2}
        assert first.labels[0] == 0

    def test_all_same_attacker_cannot_merge_separated_pairs(self):
        rng = np.random.default_rng(0)
        active = ActiveSet.initial(25)
        attacker = apply_label_attack(25, parse_behavior("label_all_same"), agent=1)
        for _ in range(50):
            honest = LabelVector(0, tuple(rng.integers(0, 4, size=25)))
            consensus = consensus_from_labels(active, [honest, attacker])
            for members in consensus.clusters:
                assert len({honest.labels[m] for m in members}) == 1

    def test_all_distinct_attacker_only_refines(self):
        rng = np.random.default_rng(1)
        active = ActiveSet.initial(30)
        honest = [LabelVector(a, tuple(rng.integers(0, 3, size=30))) for a in range(2)]
        attacker = apply_label_attack(30, parse_behavior("label_all_distinct"), agent=2)

        clean = consensus_from_labels(active, honest)
        attacked = consensus_from_labels(active, honest + [attacker])
        clean_label = dict(zip(active.ids, clean.labels))
        for members in attacked.clusters:
            assert len({clean_label[m] for m in members}) == 1
