"""
Synthetic datasets, the vertical feature partitioner and CSV ingestion.
"""

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from vertcohirf.core.errors import DatasetError
from vertcohirf.core.logging import get_logger

logger = get_logger(__name__)

SPHERE_RADII = (3.0, 7.0)
SPHERE_NOISE = 0.3
SQUARE_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
CENTER_SPACING = 10.0


@dataclass
class LabeledDataset:
    features: np.ndarray
    labels: Optional[np.ndarray] = None
    feature_names: Optional[List[str]] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim != 2:
            raise DatasetError("features must be a matrix")
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.features):
                raise DatasetError(
                    f"{len(self.labels)} labels for {len(self.features)} samples"
                )

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> Optional[int]:
        return None if self.labels is None else len(np.unique(self.labels))


@dataclass
class FeaturePartition:
    """Feature indices held by each agent; sets may overlap"""

    sets: List[Tuple[int, ...]]

    def __post_init__(self) -> None:
        self.sets = [tuple(sorted(int(f) for f in s)) for s in self.sets]

    @property
    def n_agents(self) -> int:
        return len(self.sets)

    def overlap(self, a: int, b: int) -> int:
        return len(set(self.sets[a]) & set(self.sets[b]))

    def validate(self, p: int, overlap_cap: Optional[float] = None) -> None:
        if any(len(s) == 0 for s in self.sets):
            raise DatasetError("every agent needs at least one feature")
        covered = set().union(*self.sets)
        if covered != set(range(p)):
            raise DatasetError(f"partition covers {len(covered)} of {p} features")
        if overlap_cap is None:
            return
        for a in range(self.n_agents):
            for b in range(a + 1, self.n_agents):
                limit = overlap_cap * min(len(self.sets[a]), len(self.sets[b]))
                if self.overlap(a, b) > limit + 1e-9:
                    raise DatasetError(
                        f"agents {a} and {b} share {self.overlap(a, b)} features, cap is {limit:g}"
                    )


def gen_multimodal(n: int = 1200, seed: int = 0) -> LabeledDataset:
    """Two noisy concentric spheres (columns 0-2) crossed with three square vertices (3-4).

    label = sphere * 3 + vertex, so six clusters that only both views together separate.
    """
    if n % 2:
        raise ValueError(f"n={n} must be even to balance the spheres")
    rng = np.random.default_rng(seed)
    sphere = np.repeat([0, 1], n // 2)
    radius = np.asarray(SPHERE_RADII)[sphere] + rng.normal(0.0, SPHERE_NOISE, size=n)
    directions = rng.normal(size=(n, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    vertex = rng.integers(len(SQUARE_VERTICES), size=n)

    features = np.hstack([directions * radius[:, None], SQUARE_VERTICES[vertex]])
    labels = sphere * len(SQUARE_VERTICES) + vertex
    order = rng.permutation(n)
    return LabeledDataset(
        features=features[order],
        labels=labels[order],
        feature_names=["sphere_x", "sphere_y", "sphere_z", "square_x", "square_y"],
        metadata={"generator": "multimodal", "seed": seed, "n": n, "p": 5, "c": 6},
    )


def polygon_centers(c: int, dims: int) -> np.ndarray:
    """c centers, adjacent ones CENTER_SPACING apart"""
    centers = np.zeros((c, dims))
    if c == 1:
        return centers
    if dims == 1:
        centers[:, 0] = CENTER_SPACING * np.arange(c)
        return centers
    radius = CENTER_SPACING / (2.0 * math.sin(math.pi / c))
    angles = 2.0 * math.pi * np.arange(c) / c
    centers[:, 0] = radius * np.cos(angles)
    centers[:, 1] = radius * np.sin(angles)
    return centers


def gen_blobs(
    n: int = 1000,
    c: int = 4,
    sigma: float = 0.1,
    n_noise_features: int = 3,
    a: int = 3,
    seed: int = 0,
    dims_per_agent: int = 2,
    noise_scale: float = 15.0,
) -> Tuple[LabeledDataset, "FeaturePartition"]:
    """Isotropic Gaussian blobs whose informative features are split evenly over a agents.

    Cluster centers sit on a regular c-gon whose adjacent vertices are
    CENTER_SPACING (10) apart, so non-adjacent pairs are farther apart than
    that. Each agent gets the same centers in its own dims_per_agent
    informative columns, with isotropic noise of std sigma * noise_scale.
    Pure N(0, 1) noise columns follow and are dealt round-robin. Nothing is
    shared.
    """
    if not 0 < sigma <= 1:
        raise ValueError(f"sigma={sigma} must lie in (0, 1]")
    if n % c:
        raise ValueError(f"c={c} must divide n={n}")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.repeat(np.arange(c), n // c))
    std = sigma * noise_scale

    block = polygon_centers(c, dims_per_agent)
    centers = np.hstack([block] * a + [np.zeros((c, n_noise_features))])
    informative = a * dims_per_agent
    features = centers[labels].copy()
    features[:, :informative] += rng.normal(0.0, std, size=(n, informative))
    features[:, informative:] += rng.normal(0.0, 1.0, size=(n, n_noise_features))

    sets: List[List[int]] = [
        list(range(i * dims_per_agent, (i + 1) * dims_per_agent)) for i in range(a)
    ]
    for j in range(n_noise_features):
        sets[j % a].append(informative + j)

    names = [f"agent{i}_dim{d}" for i in range(a) for d in range(dims_per_agent)]
    names += [f"noise{j}" for j in range(n_noise_features)]
    dataset = LabeledDataset(
        features=features,
        labels=labels,
        feature_names=names,
        metadata={
            "generator": "blobs", "seed": seed, "n": n, "p": features.shape[1], "c": c,
            "sigma": sigma, "noise_std": std, "centers": centers.tolist(),
        },
    )
    return dataset, FeaturePartition(sets)


def partition_features(
    p: int, a: int, share_prob: float = 0.2, overlap_cap: float = 0.3, seed: int = 0
) -> FeaturePartition:
    """Uniform primary owners, then capped random duplication to other agents.

    Every (feature, non-owner) pair draws once, in ascending order of both.
    A duplication that would push some pair's overlap above
    overlap_cap * min(set sizes) is skipped.
    """
    if a < 1:
        raise ValueError("need at least one agent")
    if p < a:
        raise ValueError(f"cannot give each of {a} agents one of {p} features")
    rng = np.random.default_rng(seed)
    owner = rng.integers(a, size=p)
    sets: List[set] = [set(np.flatnonzero(owner == i).tolist()) for i in range(a)]

    for empty in range(a):
        if sets[empty]:
            continue
        donor = max(range(a), key=lambda i: (len(sets[i]), -i))
        moved = max(sets[donor])
        sets[donor].remove(moved)
        sets[empty].add(moved)
        owner[moved] = empty

    overlap = np.zeros((a, a), dtype=np.int64)
    holders: List[List[int]] = [[int(owner[f])] for f in range(p)]
    for f in range(p):
        for b in range(a):
            if b == owner[f]:
                continue
            draw = rng.random()
            if draw >= share_prob:
                continue
            size_b = len(sets[b]) + 1
            if all(
                overlap[b, h] + 1 <= overlap_cap * min(size_b, len(sets[h]))
                for h in holders[f]
            ):
                for h in holders[f]:
                    overlap[b, h] += 1
                    overlap[h, b] += 1
                sets[b].add(f)
                holders[f].append(b)

    partition = FeaturePartition([tuple(s) for s in sets])
    partition.validate(p, overlap_cap)
    return partition


def load_csv(
    path: str,
    label_column: Optional[str] = None,
    categorical_columns: Sequence[str] = (),
) -> LabeledDataset:
    """Read a header-first numeric CSV; declared categorical columns are one-hot encoded"""
    categorical = set(categorical_columns)
    try:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
    except OSError as e:
        raise DatasetError(f"cannot read {path}: {e}") from None
    if not rows:
        raise DatasetError("empty CSV file", line=1)

    header = [name.strip() for name in rows[0]]
    missing = (categorical | ({label_column} if label_column else set())) - set(header)
    if missing:
        raise DatasetError(f"columns {sorted(missing)} not in header", line=1)

    body = rows[1:]
    for line, row in enumerate(body, start=2):
        if len(row) != len(header):
            raise DatasetError(f"expected {len(header)} fields, found {len(row)}", line=line)

    levels = {
        name: sorted({row[j].strip() for row in body})
        for j, name in enumerate(header)
        if name in categorical
    }
    names: List[str] = []
    for name in header:
        if name == label_column:
            continue
        if name in categorical:
            names.extend(f"{name}={level}" for level in levels[name])
        else:
            names.append(name)

    features = np.zeros((len(body), len(names)))
    labels = [] if label_column else None
    for i, row in enumerate(body):
        line = i + 2
        column = 0
        for name, raw in zip(header, row):
            value = raw.strip()
            if name == label_column:
                try:
                    labels.append(int(value))
                except ValueError:
                    raise DatasetError(f"label {value!r} is not an integer", line=line) from None
            elif name in categorical:
                features[i, column + levels[name].index(value)] = 1.0
                column += len(levels[name])
            else:
                try:
                    features[i, column] = float(value)
                except ValueError:
                    raise DatasetError(
                        f"column {name!r} holds non-numeric value {value!r}", line=line
                    ) from None
                column += 1

    logger.info("Loaded CSV dataset", path=path, n=len(body), p=len(names))
    return LabeledDataset(
        features=features,
        labels=None if labels is None else np.asarray(labels),
        feature_names=names,
        metadata={"generator": "csv", "path": path, "n": len(body), "p": len(names)},
    )


def write_csv(dataset: LabeledDataset, path: str, label_column: str = "label") -> str:
    """Write features (and labels) plus a JSON metadata sidecar next to the CSV"""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    names = dataset.feature_names or [f"x{j}" for j in range(dataset.p)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(names + ([label_column] if dataset.labels is not None else []))
        for i, row in enumerate(dataset.features):
            values = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                values.append(str(int(dataset.labels[i])))
            writer.writerow(values)

    sidecar = {
        "n": dataset.n,
        "p": dataset.p,
        "c": dataset.n_classes,
        "seed": dataset.metadata.get("seed"),
        "generator": dataset.metadata.get("generator"),
    }
    with open(os.path.splitext(path)[0] + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
    return path
