"""
Command-line entry point.

    vertcohirf run CONFIG
    vertcohirf sweep-byzantine CONFIG [--sigma ...] [--trials N]
    vertcohirf sweep-agents CONFIG [--agents ...] [--splits N]
    vertcohirf hpo CONFIG [--trials N]
    vertcohirf replay TRANSCRIPT [--compare RUN_DIR] [--n-s N]
    vertcohirf agent CONFIG --agent-id ID
"""

import argparse
import json
import os
import sys
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from vertcohirf.core.config import settings
from vertcohirf.core.errors import VertCoHiRFError
from vertcohirf.core.logging import get_logger, setup_logging
from vertcohirf.schemas import ExperimentConfig, load_config
from vertcohirf.services.consensus import replay
from vertcohirf.services.experiment_service import ExperimentService, write_json
from vertcohirf.transport.transcript import read_transcript

logger = get_logger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vertcohirf",
        description="Decentralized consensus clustering of vertically partitioned data",
    )
    parser.add_argument(
        "--output-dir",
        default=None,
        help="Output directory (default: $VERTCOHIRF_OUTPUT_DIR or ./results)",
    )
    parser.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="Override $VERTCOHIRF_LOG_LEVEL",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run the protocol for every repetition of a config")
    run.add_argument("config", help="TOML experiment config")
    run.add_argument("--seed", type=int, default=None, help="Override the master seed")
    run.add_argument("--repetitions", type=int, default=None, help="Override the repetition count")
    run.add_argument("--mode", choices=["sequential", "concurrent"], default=None)

    byz = sub.add_parser("sweep-byzantine", help="Honest vs attacked ARI over blob noise levels")
    byz.add_argument("config")
    byz.add_argument("--sigma", type=float, nargs="+", default=None, help="Noise grid")
    byz.add_argument("--trials", type=int, default=None)

    agents = sub.add_parser("sweep-agents", help="ARI as features spread over more agents")
    agents.add_argument("config")
    agents.add_argument("--agents", type=int, nargs="+", default=None, help="Agent counts")
    agents.add_argument("--splits", type=int, default=None, help="Random partitions per count")

    hpo = sub.add_parser("hpo", help="Random hyperparameter search")
    hpo.add_argument("config")
    hpo.add_argument("--trials", type=int, default=None)

    rep = sub.add_parser("replay", help="Rebuild labels and hierarchy from a transcript")
    rep.add_argument("transcript", help="transcript.bin written by a run")
    rep.add_argument("--compare", default=None, help="Run directory holding labels.json and cfh.json")
    rep.add_argument("--n-s", type=int, default=None, help="Candidate cap the run used")

    agent = sub.add_parser("agent", help="Run a single agent over TCP using the peer table")
    agent.add_argument("config")
    agent.add_argument("--agent-id", type=int, required=True)
    agent.add_argument("--seed", type=int, default=None)
    return parser


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    updates: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        updates["seed"] = args.seed
    if getattr(args, "repetitions", None) is not None:
        updates["repetitions"] = args.repetitions
    if getattr(args, "mode", None) is not None:
        updates["transport"] = config.transport.model_copy(update={"mode": args.mode})
    return config.model_copy(update=updates) if updates else config


def cmd_run(args: argparse.Namespace, output_dir: str) -> int:
    results = ExperimentService(_load(args), output_dir).run()
    for record in results["runs"]:
        print(
            f"seed={record['seed']} ari={record['ari']} silhouette={record['silhouette']} "
            f"rounds={record['rounds']} clusters={record['final_n_clusters']} "
            f"bits={record['total_bits']}"
        )
    print(f"Results written to: {os.path.join(output_dir, 'results.json')}")
    return 0


def cmd_sweep_byzantine(args: argparse.Namespace, output_dir: str) -> int:
    rows = ExperimentService(_load(args), output_dir).sweep_byzantine(args.sigma, args.trials)
    for row in rows:
        print(f"sigma={row['sigma']} mode={row['mode']} mean_ari={row['mean_ari']:.4f} sd={row['sd']:.4f}")
    return 0


def cmd_sweep_agents(args: argparse.Namespace, output_dir: str) -> int:
    rows = ExperimentService(_load(args), output_dir).sweep_agents(args.agents, args.splits)
    for row in rows:
        print(f"agents={row['n_agents']} mean_ari={row['mean_ari']:.4f} sd={row['sd']:.4f}")
    return 0


def cmd_hpo(args: argparse.Namespace, output_dir: str) -> int:
    result = ExperimentService(_load(args), output_dir).hpo(args.trials)
    print(f"best {result['metric']}={result['best_score']} params={result['best_params']}")
    return 0


def cmd_replay(args: argparse.Namespace, output_dir: str) -> int:
    result = replay(read_transcript(args.transcript), args.n_s)
    payload: Dict[str, Any] = {
        "labels": list(result.labels),
        "cfh": result.cfh.to_json(),
        "rounds": result.rounds,
        "bits": [report.to_dict() for report in result.bit_reports],
    }
    if args.compare:
        with open(os.path.join(args.compare, "labels.json"), encoding="utf-8") as f:
            recorded_labels = json.load(f)["labels"]
        with open(os.path.join(args.compare, "cfh.json"), encoding="utf-8") as f:
            recorded_cfh = json.load(f)
        payload["matches"] = (
            recorded_labels == payload["labels"] and recorded_cfh == payload["cfh"]
        )
    write_json(os.path.join(output_dir, "replay.json"), payload)
    print(json.dumps({k: payload[k] for k in payload if k in ("rounds", "matches")}))
    if payload.get("matches") is False:
        logger.error("Replay does not match the recorded run", compare=args.compare)
        return 1
    return 0


def cmd_agent(args: argparse.Namespace, output_dir: str) -> int:
    record = ExperimentService(_load(args), output_dir).run_agent(args.agent_id, args.seed)
    print(
        f"agent={record['agent_id']} rounds={record['rounds']} "
        f"clusters={record['final_n_clusters']} ari={record['ari']}"
    )
    return 0


COMMANDS = {
    "run": cmd_run,
    "sweep-byzantine": cmd_sweep_byzantine,
    "sweep-agents": cmd_sweep_agents,
    "hpo": cmd_hpo,
    "replay": cmd_replay,
    "agent": cmd_agent,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    output_dir = args.output_dir or settings.output_dir

    try:
        return COMMANDS[args.command](args, output_dir)
    except (VertCoHiRFError, ValidationError, FileNotFoundError) as e:
        logger.error("Command failed", command=args.command, error=str(e))
        print(f"ERROR: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
