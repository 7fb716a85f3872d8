from collections import defaultdict
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import pytest

from vertcohirf.models.messages import Phase
from vertcohirf.schemas import ByzantineBehavior, KMeansStrategy, LocalStepConfig
from vertcohirf.services.consensus import AgentState, replay, run_protocol
from vertcohirf.services.datagen import partition_features
from vertcohirf.transport.accounting import report_bound
from vertcohirf.transport.codec import decode_message
from vertcohirf.transport.simulated import SimulatedNetwork


@dataclass
class RandomSetup:
    """Everything needed to rebuild the same run any number of times"""

    views: List[np.ndarray]
    ks: List[int]
    steps: List[LocalStepConfig]
    n_s: Optional[int]
    seed: int

    def states(self, behaviors=None, scale=None):
        states = []
        for agent, view in enumerate(self.views):
            x = view
            if scale is not None and scale[0] == agent:
                x = view * scale[1]
            states.append(
                AgentState(
                    agent_id=agent,
                    x=x,
                    strategy=KMeansStrategy(k=self.ks[agent]),
                    step_cfg=self.steps[agent],
                    behavior=(behaviors or {}).get(agent, ByzantineBehavior()),
                )
            )
        return states

    def run(self, mode="sequential", max_iter=None, **kwargs):
        states = self.states(**kwargs)
        with SimulatedNetwork(len(states)) as network:
            result = run_protocol(
                states, network, max_iter=max_iter, mode=mode, n_s=self.n_s, run_seed=self.seed
            )
            received = [network.received_by(a) for a in range(len(states))]
        return result, received


def random_setup(rng, n_agents=None, n=None) -> RandomSetup:
    a = int(rng.integers(2, 7)) if n_agents is None else n_agents
    n = int(rng.integers(50, 501)) if n is None else n
    p = 2 * a + 2
    centers = rng.normal(0.0, 4.0, size=(4, p))
    x = centers[rng.integers(0, 4, size=n)] + rng.normal(size=(n, p))
    partition = partition_features(p, a, seed=int(rng.integers(2**31)))
    return RandomSetup(
        views=[x[:, list(columns)] for columns in partition.sets],
        ks=[int(rng.integers(2, 7)) for _ in range(a)],
        steps=[
            LocalStepConfig(
                feature_fraction=float(rng.choice([0.6, 1.0])),
                repetitions=int(rng.integers(1, 3)),
            )
            for _ in range(a)
        ],
        n_s=None if rng.random() < 0.5 else int(rng.integers(2, 6)),
        seed=int(rng.integers(1000)),
    )


def labels_by_round(frames):
    rounds = defaultdict(dict)
    for data in frames:
        msg = decode_message(data)
        if msg.phase is Phase.LABELS:
            rounds[msg.round][msg.sender] = msg.labels.labels
    return rounds


@pytest.mark.integration
class TestCommunicationBound:
    """Every round of randomized runs stays within the bit bound"""

    def test_randomized_runs(self):
        rng = np.random.default_rng(2024)
        violations = []
        for trial in range(100):
            result, _ = random_setup(rng).run()
            for report in result.bit_reports:
                if report.total_bits > report_bound(report):
                    violations.append((trial, report.round, report.total_bits))
        assert violations == []


@pytest.mark.integration
@pytest.mark.slow
class TestProtocolInvariants:
    """Contraction, termination, agreement and driver equivalence"""

    def test_randomized_runs(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            setup = random_setup(rng, n=int(rng.integers(40, 200)))
            max_iter = int(rng.integers(1, 8))
            sequential, _ = setup.run(mode="sequential", max_iter=max_iter)
            concurrent, _ = setup.run(mode="concurrent", max_iter=max_iter)

            sizes = [len(active) for active in sequential.active_history]
            assert all(later <= earlier for earlier, later in zip(sizes, sizes[1:]))
            assert sequential.rounds <= max_iter
            assert sequential.frames == concurrent.frames
            assert sequential.labels == concurrent.labels

            replayed = replay(sequential.frames, setup.n_s)
            assert replayed.labels == sequential.labels
            assert replayed.cfh == sequential.cfh
            assert len(set(sequential.labels)) == len(sequential.final_medoids)


@pytest.mark.integration
class TestStructuralPrivacy:
    """Rescaling one agent's features leaves every other agent's inbox unchanged"""

    @pytest.mark.parametrize("factor", [0.5, 3.0])
    def test_other_agents_receive_identical_bytes(self, factor):
        rng = np.random.default_rng(int(factor * 10))
        for _ in range(20):
            setup = random_setup(rng, n=int(rng.integers(50, 200)))
            target = int(rng.integers(len(setup.views)))

            _, baseline = setup.run()
            _, scaled = setup.run(scale=(target, factor))

            for agent in range(len(setup.views)):
                if agent != target:
                    assert scaled[agent] == baseline[agent]


@pytest.mark.integration
@pytest.mark.slow
class TestStrictConsensusIntegrity:
    """Byzantine label vectors never merge samples an honest agent separated"""

    ATTACKS = ["all_same", "all_distinct", "random_labels"]

    def test_no_consensus_cluster_spans_honest_labels(self):
        rng = np.random.default_rng(11)
        for trial in range(1000):
            a = int(rng.integers(3, 6))
            setup = random_setup(rng, n_agents=a, n=int(rng.integers(20, 60)))
            attackers = rng.choice(a, size=int(rng.integers(1, 3)), replace=False)
            behaviors = {
                int(agent): ByzantineBehavior(
                    kind="label_attack",
                    strategy=self.ATTACKS[int(rng.integers(len(self.ATTACKS)))],
                    seed=trial,
                )
                for agent in attackers
            }
            result, _ = setup.run(behaviors=behaviors, max_iter=20)

            sent = labels_by_round(result.frames)
            honest = [agent for agent in range(a) if agent not in behaviors]
            for record in result.records:
                consensus = np.asarray(record.consensus_labels)
                for cluster in np.unique(consensus):
                    members = np.flatnonzero(consensus == cluster)
                    for agent in honest:
                        local = sent[record.round][agent]
                        assert len({local[m] for m in members}) == 1

    def test_all_distinct_attacker_only_refines(self):
        rng = np.random.default_rng(12)
        for trial in range(50):
            a = int(rng.integers(3, 6))
            setup = random_setup(rng, n_agents=a, n=int(rng.integers(20, 80)))
            honest_only = RandomSetup(
                setup.views[:-1], setup.ks[:-1], setup.steps[:-1], setup.n_s, setup.seed
            )
            attacker = {a - 1: ByzantineBehavior(kind="label_attack", strategy="all_distinct")}

            clean, _ = honest_only.run(max_iter=1)
            attacked, _ = setup.run(behaviors=attacker, max_iter=1)

            clean_labels = clean.records[0].consensus_labels
            attacked_labels = np.asarray(attacked.records[0].consensus_labels)
            for cluster in np.unique(attacked_labels):
                members = np.flatnonzero(attacked_labels == cluster)
                assert len({clean_labels[m] for m in members}) == 1
