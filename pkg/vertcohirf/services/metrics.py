from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from sklearn.metrics import adjusted_rand_score, silhouette_score

from vertcohirf.core.config import settings
from vertcohirf.core.logging import get_logger
from vertcohirf.models.messages import BitReport
from vertcohirf.schemas import ClusteringStrategy, LocalStepConfig
from vertcohirf.services.base_clustering import get_clusters

logger = get_logger(__name__)


def ari(truth: Sequence[int], pred: Sequence[int]) -> float:
    """Adjusted Rand index between two labelings of the same samples"""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ValueError(f"label vectors differ in length: {len(truth)} vs {len(pred)}")
    if truth.size < 2:
        raise ValueError("ARI needs at least two samples")
    return float(adjusted_rand_score(truth, pred))


def silhouette(
    x: np.ndarray,
    labels: Sequence[int],
    sample_size: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Mean Euclidean silhouette; members of singleton clusters score 0.

    Inputs larger than sample_size (settings.silhouette_sample_size by
    default) are scored on a seeded random subsample.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    if len(labels) != len(x):
        raise ValueError(f"{len(labels)} labels for {len(x)} samples")
    k = len(np.unique(labels))
    if k < 2:
        raise ValueError("silhouette is undefined for a single cluster")
    if k == len(x):
        return 0.0
    limit = sample_size or settings.silhouette_sample_size
    return float(
        silhouette_score(
            x,
            labels,
            sample_size=limit if len(x) > limit else None,
            random_state=seed,
        )
    )


def describe(values: Sequence[float]) -> Dict[str, float]:
    """mean, sample sd (0 for one value), median, min, max"""
    data = np.asarray([v for v in values if v is not None], dtype=float)
    if data.size == 0:
        return {}
    return {
        "mean": float(data.mean()),
        "sd": float(data.std(ddof=1)) if data.size > 1 else 0.0,
        "median": float(np.median(data)),
        "min": float(data.min()),
        "max": float(data.max()),
        "count": int(data.size),
    }


@dataclass
class RunMetrics:
    ari: Optional[float] = None
    silhouette: Optional[float] = None
    bit_reports: List[BitReport] = field(default_factory=list)


def summarize_runs(runs: Sequence[RunMetrics]) -> Dict[str, Any]:
    """Per-metric statistics and the mean total bits of each round"""
    if not runs:
        raise ValueError("nothing to summarize")
    longest = max(len(run.bit_reports) for run in runs)
    bits_per_round = []
    for index in range(longest):
        totals = [run.bit_reports[index].total_bits for run in runs if len(run.bit_reports) > index]
        bits_per_round.append(float(np.mean(totals)))
    return {
        "n_runs": len(runs),
        "ari": describe([run.ari for run in runs]),
        "silhouette": describe([run.silhouette for run in runs]),
        "bits_per_round": bits_per_round,
    }


def local_reference(
    views: Sequence[np.ndarray],
    strategies: Sequence[ClusteringStrategy],
    steps: Sequence[LocalStepConfig],
    truth: Sequence[int],
    run_seed: int = 0,
) -> List[float]:
    """ARI each agent reaches alone: its first local step on its full view, no collaboration"""
    scores = []
    for agent, (view, strategy, step) in enumerate(zip(views, strategies, steps)):
        labels = get_clusters(view, strategy, step, seed=(run_seed, agent, 1))
        scores.append(ari(truth, labels))
    return scores
