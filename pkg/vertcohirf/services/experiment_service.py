import csv
import json
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError

from vertcohirf.core.config import settings
from vertcohirf.core.errors import ConfigError
from vertcohirf.core.logging import get_logger
from vertcohirf.models.messages import BitReport
from vertcohirf.schemas import (
    AgentSpec,
    ByzantineBehavior,
    DbscanStrategy,
    ExperimentConfig,
    KMeansStrategy,
    LocalStepConfig,
    RffKernelKMeansStrategy,
)
from vertcohirf.services.consensus import (
    AgentState,
    ProtocolAgent,
    ProtocolResult,
    result_from_agent,
    run_protocol,
)
from vertcohirf.services.datagen import (
    FeaturePartition,
    LabeledDataset,
    gen_blobs,
    gen_multimodal,
    load_csv,
    partition_features,
)
from vertcohirf.services.metrics import (
    RunMetrics,
    ari,
    describe,
    local_reference,
    silhouette,
    summarize_runs,
)
from vertcohirf.transport.accounting import report_bound
from vertcohirf.transport.base import Network
from vertcohirf.transport.simulated import SimulatedNetwork
from vertcohirf.transport.tcp import TcpNetwork
from vertcohirf.transport.transcript import write_transcript

logger = get_logger(__name__)

BYZANTINE_COLUMNS = ["sigma", "mode", "mean_ari", "sd", "trials"]
AGENT_SWEEP_COLUMNS = ["n_agents", "mean_ari", "sd", "splits", "mean_local_ari"]
RUN_COLUMNS = ["seed", "ari", "silhouette", "diff_ari", "rounds", "final_n_clusters", "total_bits"]


def write_json(path: str, payload: Any) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_rows(path: str, columns: Sequence[str], rows: Sequence[Dict[str, Any]]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return path


@dataclass
class PreparedRun:
    dataset: LabeledDataset
    partition: FeaturePartition
    agents: List[AgentSpec]


class ExperimentService:
    """Builds protocol runs from an ExperimentConfig and writes their artifacts"""

    def __init__(self, config: ExperimentConfig, output_dir: Optional[str] = None):
        self.config = config
        self.output_dir = output_dir or settings.output_dir

    # Single repetitions

    def load_dataset(self, seed: int) -> Tuple[LabeledDataset, Optional[FeaturePartition]]:
        spec = self.config.dataset
        data_seed = spec.seed if spec.seed is not None else seed
        if spec.generator == "multimodal":
            return gen_multimodal(n=spec.n or 1200, seed=data_seed), None
        if spec.generator == "blobs":
            return gen_blobs(
                n=spec.n or 1000,
                c=spec.c,
                sigma=spec.sigma,
                n_noise_features=spec.n_noise_features,
                a=spec.n_agents,
                seed=data_seed,
                dims_per_agent=spec.dims_per_agent,
                noise_scale=spec.noise_scale,
            )
        return load_csv(spec.path, spec.label_column, spec.categorical_columns), None

    def prepare(self, seed: int) -> PreparedRun:
        agents = self.config.resolved_agents()
        dataset, generated = self.load_dataset(seed)
        if all(agent.features is not None for agent in agents):
            partition = FeaturePartition([agent.features for agent in agents])
        elif (
            generated is not None
            and generated.n_agents == len(agents)
            and not self.config.partition.sampled
        ):
            partition = generated
        else:
            partition = partition_features(
                dataset.p,
                len(agents),
                self.config.partition.share_prob,
                self.config.partition.overlap_cap,
                seed=seed,
            )
        out_of_range = [f for s in partition.sets for f in s if f >= dataset.p]
        if out_of_range:
            raise ConfigError(
                f"features {sorted(set(out_of_range))} exceed the dataset's {dataset.p} columns"
            )
        return PreparedRun(dataset=dataset, partition=partition, agents=agents)

    def build_states(self, prepared: PreparedRun) -> List[AgentState]:
        features = prepared.dataset.features
        return [
            AgentState(
                agent_id=i,
                x=features[:, list(columns)],
                strategy=spec.strategy,
                step_cfg=spec.step,
                behavior=spec.behavior,
            )
            for i, (spec, columns) in enumerate(zip(prepared.agents, prepared.partition.sets))
        ]

    def make_network(self, n_agents: int) -> Network:
        transport = self.config.transport
        if transport.kind == "tcp":
            addresses = {peer.agent_id: (peer.host, peer.port) for peer in transport.peers}
            return TcpNetwork(addresses, collect_timeout=transport.collect_timeout)
        return SimulatedNetwork(n_agents, collect_timeout=transport.collect_timeout)

    def execute(self, seed: int) -> Tuple[PreparedRun, ProtocolResult]:
        prepared = self.prepare(seed)
        states = self.build_states(prepared)
        transport = self.config.transport
        mode = "concurrent" if transport.kind == "tcp" else transport.mode
        with self.make_network(len(states)) as network:
            result = run_protocol(
                states,
                network,
                max_iter=self.config.max_iter,
                mode=mode,
                n_s=self.config.n_s,
                run_seed=seed,
            )
        return prepared, result

    def run_repetition(self, seed: int, write_artifacts: bool = True) -> Dict[str, Any]:
        """Run one seed and return its results.json record"""
        prepared, result = self.execute(seed)
        record = self.score(seed, prepared, result)
        if write_artifacts:
            record["artifacts"] = self.write_run_artifacts(seed, result)
        return record

    def score(self, seed: int, prepared: PreparedRun, result: ProtocolResult) -> Dict[str, Any]:
        dataset = prepared.dataset
        metrics = self.config.metrics
        record: Dict[str, Any] = {
            "seed": seed,
            "dataset_seed": self.config.dataset.seed if self.config.dataset.seed is not None else seed,
            "n": dataset.n,
            "n_agents": len(prepared.agents),
            "feature_sets": [list(s) for s in prepared.partition.sets],
            "rounds": result.rounds,
            "final_n_clusters": result.n_clusters,
            "bits": [
                {**report.to_dict(), "bound": report_bound(report)} for report in result.bit_reports
            ],
            "total_bits": sum(report.total_bits for report in result.bit_reports),
            "ari": None,
            "local_ari": None,
            "diff_ari": None,
            "silhouette": None,
        }
        if dataset.labels is not None and "ari" in metrics:
            record["ari"] = ari(dataset.labels, result.labels)
            local = local_reference(
                [dataset.features[:, list(s)] for s in prepared.partition.sets],
                [agent.strategy for agent in prepared.agents],
                [agent.step for agent in prepared.agents],
                dataset.labels,
                run_seed=seed,
            )
            record["local_ari"] = local
            record["diff_ari"] = record["ari"] - float(np.mean(local))
        if "silhouette" in metrics and 2 <= result.n_clusters < dataset.n:
            record["silhouette"] = silhouette(dataset.features, result.labels, seed=seed)
        return record

    def run_dir(self, seed: int, prefix: str = "") -> str:
        return os.path.join(self.output_dir, prefix, f"seed_{seed}")

    def write_run_artifacts(
        self, seed: int, result: ProtocolResult, prefix: str = ""
    ) -> Dict[str, str]:
        directory = self.run_dir(seed, prefix)
        os.makedirs(directory, exist_ok=True)
        write_json(os.path.join(directory, "cfh.json"), result.cfh.to_json())
        with open(os.path.join(directory, "cfh.nwk"), "w", encoding="utf-8") as f:
            f.write(result.cfh.to_newick() + "\n")
        write_json(os.path.join(directory, "labels.json"), {"labels": list(result.labels)})
        write_transcript(os.path.join(directory, "transcript.bin"), result.frames)
        logger.info("Run artifacts written", seed=seed, directory=directory)
        relative = os.path.relpath(directory, self.output_dir)
        return {
            name: os.path.join(relative, name)
            for name in ("cfh.json", "cfh.nwk", "labels.json", "transcript.bin")
        }

    def run_agent(self, agent_id: int, seed: Optional[int] = None) -> Dict[str, Any]:
        """Run only agent_id of the peer table in this process, over TCP"""
        seed = self.config.seed if seed is None else seed
        transport = self.config.transport
        if transport.kind != "tcp":
            raise ConfigError("agent processes need a tcp transport with a peer table")
        prepared = self.prepare(seed)
        states = self.build_states(prepared)
        if not 0 <= agent_id < len(states):
            raise ConfigError(f"agent {agent_id} is not in the peer table")

        addresses = {peer.agent_id: (peer.host, peer.port) for peer in transport.peers}
        with TcpNetwork(
            addresses, hosted=[agent_id], collect_timeout=transport.collect_timeout
        ) as network:
            agent = ProtocolAgent(
                states[agent_id],
                network.endpoint(agent_id),
                run_seed=seed,
                max_iter=self.config.max_iter,
                n_s=self.config.n_s,
            ).run()
            result = result_from_agent(agent, network.transcript(), len(states))

        record = self.score(seed, prepared, result)
        record["agent_id"] = agent_id
        record["artifacts"] = self.write_run_artifacts(seed, result, prefix=f"agent_{agent_id}")
        write_json(os.path.join(self.output_dir, f"agent_{agent_id}", "results.json"), record)
        return record

    # Commands

    def dispatch(
        self, config: ExperimentConfig, seeds: Sequence[int], write_artifacts: bool
    ) -> List[Dict[str, Any]]:
        """Run one task per seed (in-process when Celery is eager) and sort by seed"""
        from vertcohirf.tasks.experiment import run_repetition

        payload = config.model_dump(mode="json")
        output_dir = self.output_dir if write_artifacts else None
        logger.debug(
            "Dispatching repetitions",
            name=config.name,
            seeds=len(seeds),
            target="worker" if settings.uses_worker else "eager",
        )
        pending = [run_repetition.delay(payload, seed, output_dir) for seed in seeds]
        records = [r.get(timeout=settings.max_task_timeout) for r in pending]
        return sorted(records, key=lambda record: record["seed"])

    def run(self) -> Dict[str, Any]:
        """cmd_run: every repetition, results.json, results.csv and per-seed artifacts"""
        records = self.dispatch(self.config, self.config.seeds(), write_artifacts=True)
        summary = summarize_runs([_as_metrics(record) for record in records])
        results = {
            "name": self.config.name,
            "config": self.config.model_dump(mode="json"),
            "runs": records,
            "summary": summary,
        }
        write_json(os.path.join(self.output_dir, "results.json"), results)
        write_rows(os.path.join(self.output_dir, "results.csv"), RUN_COLUMNS, records)
        logger.info(
            "Experiment finished",
            name=self.config.name,
            runs=len(records),
            mean_ari=summary["ari"].get("mean"),
            output_dir=self.output_dir,
        )
        return results

    def sweep_byzantine(
        self, sigma_grid: Optional[Sequence[float]] = None, trials: Optional[int] = None
    ) -> List[Dict[str, Any]]:
        """Honest vs one phase-2 ranking attacker over the blob noise grid"""
        sweep = self.config.byzantine_sweep
        sigmas = list(sigma_grid or sweep.sigma_grid)
        n_trials = trials or sweep.trials
        if any(not 0 < s <= 1 for s in sigmas):
            raise ConfigError("sigma values must lie in (0, 1]")
        if self.config.dataset.generator != "blobs":
            raise ConfigError("the Byzantine sweep runs on the blobs generator")
        n_agents = self.config.dataset.n_agents
        if not 0 <= sweep.attacker < n_agents:
            raise ConfigError(f"attacker {sweep.attacker} is not one of the {n_agents} agents")

        template = self.config.agents[0]
        seeds = [self.config.seed + t for t in range(n_trials)]
        rows = []
        for sigma in sigmas:
            for mode in ("honest", "attack"):
                agents = []
                for i in range(n_agents):
                    behavior = ByzantineBehavior()
                    if mode == "attack" and i == sweep.attacker:
                        behavior = ByzantineBehavior(
                            kind="rank_permute", strategy=sweep.attack.value, seed=self.config.seed
                        )
                    agents.append(template.model_copy(update={"features": None, "behavior": behavior}))
                config = self.config.model_copy(
                    update={
                        "dataset": self.config.dataset.model_copy(update={"sigma": sigma}),
                        "agents": agents,
                        "n_agents": None,
                        "metrics": ["ari"],
                        "transport": self.config.transport.model_copy(update={"kind": "sim"}),
                    }
                )
                records = self.dispatch(config, seeds, write_artifacts=False)
                stats = describe([record["ari"] for record in records])
                rows.append({
                    "sigma": sigma,
                    "mode": mode,
                    "mean_ari": stats["mean"],
                    "sd": stats["sd"],
                    "trials": len(records),
                })
                logger.info("Sweep point done", sigma=sigma, mode=mode, mean_ari=stats["mean"])
        write_rows(os.path.join(self.output_dir, "byzantine_sweep.csv"), BYZANTINE_COLUMNS, rows)
        return rows

    def sweep_agents(
        self, a_grid: Optional[Sequence[int]] = None, splits: Optional[int] = None
    ) -> List[Dict[str, Any]]:
        """Mean ARI per agent count over random overlapping feature partitions"""
        sweep = self.config.agent_sweep
        grid = list(a_grid or sweep.a_grid)
        n_splits = splits or sweep.splits
        dataset_preview, _ = self.load_dataset(self.config.seed)
        if dataset_preview.p < max(grid):
            raise ConfigError(
                f"{dataset_preview.p} features cannot be spread over {max(grid)} agents"
            )

        template = self.config.agents[0].model_copy(update={"features": None})
        dataset = self.config.dataset.model_copy(
            update={"seed": self.config.dataset.seed if self.config.dataset.seed is not None
                    else self.config.seed}
        )
        seeds = [self.config.seed + s for s in range(n_splits)]
        rows = []
        for a in grid:
            config = self.config.model_copy(
                update={
                    "agents": [template],
                    "n_agents": a,
                    "dataset": dataset,
                    "partition": self.config.partition.model_copy(update={"sampled": True}),
                    "metrics": ["ari"],
                    "transport": self.config.transport.model_copy(update={"kind": "sim"}),
                }
            )
            records = self.dispatch(config, seeds, write_artifacts=False)
            stats = describe([record["ari"] for record in records])
            local = [float(np.mean(record["local_ari"])) for record in records]
            rows.append({
                "n_agents": a,
                "mean_ari": stats["mean"],
                "sd": stats["sd"],
                "splits": len(records),
                "mean_local_ari": float(np.mean(local)),
            })
            logger.info("Sweep point done", n_agents=a, mean_ari=stats["mean"])
        write_rows(os.path.join(self.output_dir, "agent_sweep.csv"), AGENT_SWEEP_COLUMNS, rows)
        return rows

    def hpo(self, trials: Optional[int] = None) -> Dict[str, Any]:
        """Seeded random search over the hyperparameter space, maximizing the chosen metric"""
        spec = self.config.hpo
        n_trials = spec.trials if trials is None else trials
        if n_trials < 1:
            raise ConfigError("hyperparameter search needs at least one trial")

        history = []
        best: Optional[Dict[str, Any]] = None
        for trial in range(n_trials):
            rng = np.random.default_rng([self.config.seed, trial])
            params = sample_params(spec.space(), spec.fixed, rng)
            candidate = apply_params(self.config, params)
            score = self.evaluate(candidate, spec.metric)
            entry = {"trial": trial, "params": params, "score": score}
            history.append(entry)
            logger.info("HPO trial", trial=trial, score=score, **params)
            if score is not None and (best is None or score > best["score"]):
                best = entry

        if best is None:
            raise ConfigError(f"no trial produced a {spec.metric} score")
        best_config = apply_params(self.config, best["params"])
        result = {
            "metric": spec.metric,
            "best_trial": best["trial"],
            "best_params": best["params"],
            "best_score": best["score"],
            "best_config": best_config.model_dump(mode="json"),
            "trials": history,
        }
        write_json(os.path.join(self.output_dir, "hpo.json"), result)
        return result

    def evaluate(self, config: ExperimentConfig, metric: str) -> Optional[float]:
        config = config.model_copy(update={"metrics": [metric]})
        records = self.dispatch(config, config.seeds(), write_artifacts=False)
        values = [record[metric] for record in records if record[metric] is not None]
        return float(np.mean(values)) if values else None


def _as_metrics(record: Dict[str, Any]) -> RunMetrics:
    reports = [
        BitReport(**{k: v for k, v in bits.items() if k not in ("total_bits", "bound")})
        for bits in record["bits"]
    ]
    return RunMetrics(ari=record["ari"], silhouette=record["silhouette"], bit_reports=reports)


def sample_params(
    space: Dict[str, Tuple[float, float, bool]],
    fixed: Dict[str, float],
    rng: np.random.Generator,
) -> Dict[str, Any]:
    """One draw per dimension, in sorted name order so the stream is stable"""
    params: Dict[str, Any] = {}
    for name in sorted(space):
        low, high, integer = space[name]
        if integer:
            value = int(rng.integers(int(low), int(high) + 1))
        else:
            value = float(rng.uniform(low, high))
        if name in fixed:
            value = int(fixed[name]) if integer else float(fixed[name])
        params[name] = value
    return params


def apply_params(config: ExperimentConfig, params: Dict[str, Any]) -> ExperimentConfig:
    """Config with every agent's strategy and local step set from params.

    The updated models are validated again, so out-of-range values raise
    ConfigError.
    """
    agents = []
    for agent in config.agents:
        strategy = agent.strategy
        if isinstance(strategy, KMeansStrategy):
            update = {"k": params["k"]}
        elif isinstance(strategy, DbscanStrategy):
            update = {"eps": params["eps"], "min_samples": params["min_samples"]}
        elif isinstance(strategy, RffKernelKMeansStrategy):
            update = {"k": params["k"], "gamma": params["gamma"]}
        else:
            update = {}
        step_update = {
            "feature_fraction": params["feature_fraction"],
            "repetitions": params["repetitions"],
        }
        try:
            strategy = type(strategy).model_validate({**strategy.model_dump(), **update})
            step = LocalStepConfig.model_validate({**agent.step.model_dump(), **step_update})
        except ValidationError as e:
            raise ConfigError(f"sampled parameters {params} are invalid: {e}") from None
        agents.append(agent.model_copy(update={"strategy": strategy, "step": step}))
    return config.model_copy(update={"agents": agents})
