from itertools import combinations
from math import comb

import numpy as np
import pytest

from vertcohirf.models.messages import BitReport
from vertcohirf.schemas import KMeansStrategy, LocalStepConfig
from vertcohirf.services.base_clustering import get_clusters
from vertcohirf.services.metrics import (
    RunMetrics,
    ari,
    describe,
    local_reference,
    silhouette,
    summarize_runs,
)


def pair_counting_ari(truth, pred):
    """Adjusted Rand index by enumerating every sample pair"""
    n = len(truth)
    both = sum(
        1 for i, j in combinations(range(n), 2) if truth[i] == truth[j] and pred[i] == pred[j]
    )
    same_truth = sum(1 for i, j in combinations(range(n), 2) if truth[i] == truth[j])
    same_pred = sum(1 for i, j in combinations(range(n), 2) if pred[i] == pred[j])
    expected = same_truth * same_pred / comb(n, 2)
    maximum = (same_truth + same_pred) / 2
    if maximum == expected:
        return 1.0
    return (both - expected) / (maximum - expected)


def textbook_silhouette(x, labels):
    n = len(x)
    scores = []
    for i in range(n):
        own = [j for j in range(n) if labels[j] == labels[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = np.mean([np.linalg.norm(x[i] - x[j]) for j in own])
        b = min(
            np.mean([np.linalg.norm(x[i] - x[j]) for j in range(n) if labels[j] == other])
            for other in set(labels) if other != labels[i]
        )
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


def report(round_, total):
    return BitReport(round_, total, 0, 2, 8, 8, 3, 2, 3)


class TestAri:
    """Test the adjusted Rand index"""

    def test_identical_partitions(self):
        assert ari([0, 0, 1, 1, 2], [5, 5, 3, 3, 9]) == 1.0

    def test_single_predicted_cluster(self):
        assert ari([0, 0, 1, 1, 2, 2], [0] * 6) == pytest.approx(0.0)

    def test_hand_example_matches_pair_counting(self):
        truth, pred = [0, 0, 1, 1, 2, 2], [0, 0, 1, 2, 2, 2]
        assert ari(truth, pred) == pytest.approx(pair_counting_ari(truth, pred), abs=1e-9)

    def test_random_instances_match_pair_counting(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 26))
            truth = rng.integers(0, 4, size=n).tolist()
            pred = rng.integers(0, 4, size=n).tolist()
            assert ari(truth, pred) == pytest.approx(pair_counting_ari(truth, pred), abs=1e-9)

    def test_symmetric_and_relabeling_invariant(self):
        rng = np.random.default_rng(1)
        truth = rng.integers(0, 3, size=40)
        pred = rng.integers(0, 4, size=40)
        assert ari(truth, pred) == pytest.approx(ari(pred, truth))
        assert ari(truth, pred) == pytest.approx(ari(truth, (pred + 7) * 3))

    def test_single_sample_rejected(self):
        with pytest.raises(ValueError):
            ari([0], [0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ari([0, 1], [0, 1, 1])


class TestSilhouette:
    """Test the Euclidean silhouette"""

    def test_separated_blobs(self):
        rng = np.random.default_rng(3)
        x = np.vstack([rng.normal(0, 0.1, (30, 2)), rng.normal(10, 0.1, (30, 2))])
        assert silhouette(x, [0] * 30 + [1] * 30) > 0.9

    def test_random_labels_on_one_blob(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(400, 2))
        assert abs(silhouette(x, rng.integers(0, 2, size=400))) < 0.1

    def test_matches_textbook_formula(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            n = int(rng.integers(3, 26))
            x = rng.normal(size=(n, 2))
            labels = rng.integers(0, 3, size=n)
            if len(set(labels.tolist())) < 2:
                continue
            assert silhouette(x, labels) == pytest.approx(
                textbook_silhouette(x, labels.tolist()), abs=1e-9
            )

    def test_singletons_score_zero(self):
        x = np.array([[0.0], [0.1], [5.0]])
        expected = textbook_silhouette(x, [0, 0, 1])
        assert silhouette(x, [0, 0, 1]) == pytest.approx(expected)

    def test_scale_invariant(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(50, 3))
        labels = rng.integers(0, 3, size=50)
        assert silhouette(x, labels) == pytest.approx(silhouette(3.0 * x, labels))

    def test_all_singletons_score_zero(self):
        x = np.arange(6, dtype=float).reshape(3, 2)
        assert silhouette(x, [0, 1, 2]) == 0.0

    def test_single_cluster(self):
        with pytest.raises(ValueError):
            silhouette(np.zeros((4, 2)), [1, 1, 1, 1])

    def test_subsampled_when_large(self):
        rng = np.random.default_rng(8)
        x = np.vstack([rng.normal(0, 0.1, (100, 2)), rng.normal(10, 0.1, (100, 2))])
        labels = [0] * 100 + [1] * 100
        assert silhouette(x, labels, sample_size=50, seed=1) > 0.9

    def test_subsample_is_seeded(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(120, 2))
        labels = rng.integers(0, 3, size=120)
        first = silhouette(x, labels, sample_size=40, seed=2)
        assert first == silhouette(x, labels, sample_size=40, seed=2)


class TestSummaries:
    """Test run summaries"""

    def test_describe_hand_values(self):
        stats = describe([1.0, 2.0, 3.0, 4.0, 5.0])
        assert stats["mean"] == 3.0
        assert stats["sd"] == pytest.approx(np.sqrt(2.5))
        assert stats["median"] == 3.0
        assert (stats["min"], stats["max"], stats["count"]) == (1.0, 5.0, 5)

    def test_describe_single_value(self):
        stats = describe([0.7])
        assert stats["mean"] == 0.7
        assert stats["sd"] == 0.0

    def test_describe_skips_missing(self):
        assert describe([None, 1.0, None])["count"] == 1
        assert describe([None]) == {}

    def test_identical_runs(self):
        runs = [RunMetrics(ari=0.9, silhouette=0.5, bit_reports=[report(1, 40)]) for _ in range(5)]
        summary = summarize_runs(runs)
        assert summary["n_runs"] == 5
        assert summary["ari"]["sd"] == 0.0
        assert summary["bits_per_round"] == [40.0]

    def test_bits_per_round_over_uneven_runs(self):
        runs = [
            RunMetrics(ari=1.0, bit_reports=[report(1, 100), report(2, 20)]),
            RunMetrics(ari=0.5, bit_reports=[report(1, 60)]),
        ]
        summary = summarize_runs(runs)
        assert summary["bits_per_round"] == [80.0, 20.0]
        assert summary["silhouette"] == {}

    def test_empty(self):
        with pytest.raises(ValueError):
            summarize_runs([])


class TestLocalReference:
    """Test the non-collaborative baseline"""

    def test_one_score_per_agent(self, small_blobs):
        dataset, partition = small_blobs
        views = [dataset.features[:, list(s)] for s in partition.sets]
        scores = local_reference(
            views, [KMeansStrategy(k=3)] * 3, [LocalStepConfig()] * 3, dataset.labels
        )
        assert len(scores) == 3
        for agent, view in enumerate(views):
            labels = get_clusters(view, KMeansStrategy(k=3), LocalStepConfig(), seed=(0, agent, 1))
            assert scores[agent] == ari(dataset.labels, labels)
