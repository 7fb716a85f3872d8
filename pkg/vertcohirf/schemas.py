import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from enum import Enum
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from vertcohirf.core.errors import ConfigError


class KMeansStrategy(BaseModel):
    """Lloyd's k-means with k-means++ seeding"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["kmeans"] = "kmeans"
    k: int = Field(ge=1, description="Number of clusters")
    seed: int = Field(default=0, description="Strategy-level seed mixed into every fit")


class DbscanStrategy(BaseModel):
    """Euclidean DBSCAN; noise points become singleton clusters"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["dbscan"] = "dbscan"
    eps: float = Field(gt=0, description="Neighborhood radius")
    min_samples: int = Field(ge=1, description="Neighbors (self included) making a core point")
    seed: int = 0


class RffKernelKMeansStrategy(BaseModel):
    """k-means on a random Fourier feature map of the RBF kernel"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: Literal["rff_kernel_kmeans"] = "rff_kernel_kmeans"
    k: int = Field(ge=1)
    gamma: float = Field(gt=0, description="RBF kernel scale, k(x, y) = exp(-gamma ||x - y||^2)")
    n_features: int = Field(default=500, ge=1, description="Random Fourier features")
    seed: int = 0


ClusteringStrategy = Annotated[
    Union[KMeansStrategy, DbscanStrategy, RffKernelKMeansStrategy],
    Field(discriminator="kind"),
]


class LocalStepConfig(BaseModel):
    """One local step: repetitions over random feature subsets, then local consensus"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    repetitions: int = Field(default=1, ge=1, description="R_a")
    feature_fraction: float = Field(default=1.0, gt=0, le=1, description="q_a%")
    relaxed: bool = Field(default=False, description="Use the relaxed (*) local consensus")
    relax_threshold: float = Field(default=0.8, gt=0, le=1, description="h")


class BehaviorKind(str, Enum):
    HONEST = "honest"
    RANK_PERMUTE = "rank_permute"
    LABEL_ATTACK = "label_attack"


class RankAttack(str, Enum):
    REVERSE = "reverse"
    PROMOTE_WORST = "promote_worst"
    RANDOM_SHUFFLE = "random_shuffle"


class LabelAttack(str, Enum):
    ALL_SAME = "all_same"
    ALL_DISTINCT = "all_distinct"
    RANDOM_LABELS = "random_labels"


BEHAVIOR_SHORTHANDS: Dict[str, Dict[str, str]] = {
    "honest": {"kind": "honest"},
    "rank_reverse": {"kind": "rank_permute", "strategy": "reverse"},
    "rank_promote_worst": {"kind": "rank_permute", "strategy": "promote_worst"},
    "rank_shuffle": {"kind": "rank_permute", "strategy": "random_shuffle"},
    "label_all_same": {"kind": "label_attack", "strategy": "all_same"},
    "label_all_distinct": {"kind": "label_attack", "strategy": "all_distinct"},
    "label_random": {"kind": "label_attack", "strategy": "random_labels"},
}


class ByzantineBehavior(BaseModel):
    """How an agent tampers with its outgoing messages"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: BehaviorKind = BehaviorKind.HONEST
    strategy: Optional[str] = None
    seed: int = 0
    n_labels: int = Field(default=2, ge=1, description="Label alphabet of random_labels")

    @model_validator(mode="before")
    @classmethod
    def expand_shorthand(cls, value: Any) -> Any:
        if isinstance(value, str):
            if value not in BEHAVIOR_SHORTHANDS:
                raise ValueError(
                    f"unknown behavior {value!r}; expected one of {sorted(BEHAVIOR_SHORTHANDS)}"
                )
            return dict(BEHAVIOR_SHORTHANDS[value])
        return value

    @model_validator(mode="after")
    def check_strategy(self) -> "ByzantineBehavior":
        if self.kind is BehaviorKind.HONEST:
            if self.strategy is not None:
                raise ValueError("honest behavior takes no strategy")
        elif self.kind is BehaviorKind.RANK_PERMUTE:
            RankAttack(self.strategy)
        else:
            LabelAttack(self.strategy)
        return self

    @property
    def is_honest(self) -> bool:
        return self.kind is BehaviorKind.HONEST

    @property
    def rank_attack(self) -> Optional[RankAttack]:
        return RankAttack(self.strategy) if self.kind is BehaviorKind.RANK_PERMUTE else None

    @property
    def label_attack(self) -> Optional[LabelAttack]:
        return LabelAttack(self.strategy) if self.kind is BehaviorKind.LABEL_ATTACK else None


HONEST = ByzantineBehavior()


class DatasetSpec(BaseModel):
    """Which dataset a run uses: a generator with its parameters, or a CSV file"""

    model_config = ConfigDict(extra="forbid")

    generator: Literal["multimodal", "blobs", "csv"] = "multimodal"
    seed: Optional[int] = Field(
        default=None, ge=0, description="Fixed generator seed; defaults to each repetition's seed"
    )
    n: Optional[int] = Field(default=None, ge=2)
    c: int = Field(default=4, ge=1, description="Blob clusters")
    sigma: float = Field(default=0.1, gt=0, le=1, description="Relative blob noise")
    n_noise_features: int = Field(default=3, ge=0)
    dims_per_agent: int = Field(default=2, ge=1)
    noise_scale: float = Field(default=15.0, gt=0)
    n_agents: int = Field(default=3, ge=1, description="Agents the blob features are split over")
    path: Optional[str] = None
    label_column: Optional[str] = None
    categorical_columns: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_source(self) -> "DatasetSpec":
        if self.generator == "csv":
            if not self.path:
                raise ValueError("csv datasets need a path")
            if not os.path.exists(self.path):
                raise ValueError(f"dataset file {self.path} does not exist")
        return self


class PartitionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    share_prob: float = Field(default=0.2, ge=0, le=1)
    overlap_cap: float = Field(default=0.3, ge=0, le=1)
    sampled: bool = Field(
        default=False, description="Always draw the partition, even when the generator splits features"
    )


class AgentSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    features: Optional[List[int]] = Field(
        default=None,
        description="Global feature indices of this agent; drawn by the partitioner when omitted"
    )
    strategy: ClusteringStrategy
    step: LocalStepConfig = Field(default_factory=LocalStepConfig)
    behavior: ByzantineBehavior = Field(default_factory=ByzantineBehavior)

    @field_validator("features")
    @classmethod
    def check_features(cls, value: Optional[List[int]]) -> Optional[List[int]]:
        if value is not None:
            if not value:
                raise ValueError("an agent needs at least one feature")
            if min(value) < 0:
                raise ValueError("feature indices must be non-negative")
        return value


class PeerSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    agent_id: int = Field(ge=0)
    address: str = Field(description="host:port")

    @property
    def host(self) -> str:
        return self.address.rsplit(":", 1)[0]

    @property
    def port(self) -> int:
        return int(self.address.rsplit(":", 1)[1])

    @field_validator("address")
    @classmethod
    def check_address(cls, value: str) -> str:
        host, sep, port = value.rpartition(":")
        if not sep or not host or not port.isdigit():
            raise ValueError(f"address {value!r} is not host:port")
        return value


class TransportSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["sim", "tcp"] = "sim"
    mode: Literal["sequential", "concurrent"] = "sequential"
    peers: List[PeerSpec] = Field(default_factory=list)
    collect_timeout: Optional[float] = Field(default=None, gt=0)


# Search spaces of the hyperparameter tables: (low, high, integer?)
DEFAULT_HPO_BOUNDS: Dict[str, Tuple[float, float, bool]] = {
    "feature_fraction": (0.1, 1.0, False),
    "repetitions": (2, 10, True),
    "eps": (0.1, 10.0, False),
    "min_samples": (2, 50, True),
    "k": (2, 30, True),
    "gamma": (0.1, 30.0, False),
}


class HpoSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    trials: int = Field(default=50, ge=0)
    metric: Literal["ari", "silhouette"] = "ari"
    bounds: Dict[str, Tuple[float, float]] = Field(default_factory=dict)
    fixed: Dict[str, float] = Field(default_factory=dict)

    @field_validator("bounds")
    @classmethod
    def check_bounds(cls, value: Dict[str, Tuple[float, float]]) -> Dict[str, Tuple[float, float]]:
        for name, (low, high) in value.items():
            if name not in DEFAULT_HPO_BOUNDS:
                raise ValueError(f"unknown search dimension {name!r}")
            if low > high:
                raise ValueError(f"empty range for {name}: [{low}, {high}]")
        return value

    @field_validator("fixed")
    @classmethod
    def check_fixed(cls, value: Dict[str, float]) -> Dict[str, float]:
        unknown = sorted(set(value) - set(DEFAULT_HPO_BOUNDS))
        if unknown:
            raise ValueError(f"unknown fixed dimensions {unknown}")
        return value

    def space(self) -> Dict[str, Tuple[float, float, bool]]:
        merged = dict(DEFAULT_HPO_BOUNDS)
        for name, (low, high) in self.bounds.items():
            merged[name] = (low, high, DEFAULT_HPO_BOUNDS[name][2])
        return merged


class ByzantineSweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    sigma_grid: List[float] = Field(default_factory=lambda: [0.1, 0.25, 0.5, 0.75, 1.0])
    trials: int = Field(default=20, ge=1)
    attacker: int = Field(default=2, ge=0)
    attack: RankAttack = RankAttack.REVERSE

    @field_validator("sigma_grid")
    @classmethod
    def check_sigmas(cls, value: List[float]) -> List[float]:
        if not value or any(not 0 < s <= 1 for s in value):
            raise ValueError("sigma values must lie in (0, 1]")
        return value


class AgentSweepSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    a_grid: List[int] = Field(default_factory=lambda: [2, 3, 4, 5, 6])
    splits: int = Field(default=5, ge=1)

    @field_validator("a_grid")
    @classmethod
    def check_grid(cls, value: List[int]) -> List[int]:
        if not value or min(value) < 1:
            raise ValueError("agent counts must be positive")
        return value


class ExperimentConfig(BaseModel):
    """Everything a run needs; loaded from a TOML file"""

    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    seed: int = Field(default=0, ge=0, description="Master seed")
    repetitions: int = Field(default=1, ge=1)
    max_iter: Optional[int] = Field(default=None, ge=1)
    n_s: Optional[int] = Field(default=None, ge=1, description="Ranked candidates per cluster")
    metrics: List[Literal["ari", "silhouette"]] = Field(default_factory=lambda: ["ari", "silhouette"])
    n_agents: Optional[int] = Field(default=None, ge=1)
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    partition: PartitionSpec = Field(default_factory=PartitionSpec)
    agents: List[AgentSpec] = Field(min_length=1)
    transport: TransportSpec = Field(default_factory=TransportSpec)
    hpo: HpoSpec = Field(default_factory=HpoSpec)
    byzantine_sweep: ByzantineSweepSpec = Field(default_factory=ByzantineSweepSpec)
    agent_sweep: AgentSweepSpec = Field(default_factory=AgentSweepSpec)

    @model_validator(mode="after")
    def check_agents(self) -> "ExperimentConfig":
        if self.n_agents is not None and len(self.agents) not in (1, self.n_agents):
            raise ValueError(
                f"{len(self.agents)} agent specs for n_agents={self.n_agents}; "
                "give one template or one spec per agent"
            )
        if self.transport.kind == "tcp":
            ids = sorted(peer.agent_id for peer in self.transport.peers)
            if ids != list(range(len(self.resolved_agents()))):
                raise ValueError("the tcp peer table must list every agent id exactly once")
        return self

    def resolved_agents(self) -> List[AgentSpec]:
        """One spec per agent, replicating a single template when n_agents is set"""
        if self.n_agents is not None and len(self.agents) == 1:
            return [self.agents[0]] * self.n_agents
        return list(self.agents)

    def seeds(self) -> List[int]:
        return [self.seed + i for i in range(self.repetitions)]


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a TOML experiment config"""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}") from None
    return parse_config(raw)


def parse_config(raw: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"invalid experiment config: {e}") from None
