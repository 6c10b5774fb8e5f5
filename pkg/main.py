"""
MATD3 Lab
Command-line driver for training, grid search, bias probing, tournaments and reports
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent))

from config.settings import ExperimentConfig, LabSettings, ProbeConfig
from src.utils.logger import LoggerMode, set_level, setup_background_logging, setup_logger
from src.utils.validation import ConfigError, LabError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

logger = None


def _load_config(path: str, seed_override=None) -> ExperimentConfig:
    config = ExperimentConfig.from_file(path)
    if seed_override is not None:
        data = config.model_dump(mode="json")
        data["seeds"] = [seed_override]
        config = ExperimentConfig.from_dict(data)
    return config


def _load_axes(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            axes = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read axes file {path}: {e}") from e
    if not isinstance(axes, dict):
        raise ConfigError(f"axes file {path} must hold an object of axis -> list of values")
    return axes


def cmd_train(args) -> int:
    from src.core.harness import run
    config = _load_config(args.config, args.seed_override)
    summary = run(config, out=args.out, dump_trajectory=args.dump_trajectory)
    logger.info(f"Final reward: {summary.final_mean} (ci95 {summary.final_ci95})")
    return EXIT_RUNTIME if summary.failed_seeds else EXIT_OK


def cmd_grid(args) -> int:
    from src.core.harness import grid_search
    config = _load_config(args.config)
    entries = grid_search(config, _load_axes(args.axes), out=args.out)
    for entry in entries:
        logger.info(f"#{entry.rank} {entry.overrides}: {entry.summary.final_mean}")
    return EXIT_RUNTIME if any(e.summary.failed_seeds for e in entries) else EXIT_OK


def cmd_probe(args) -> int:
    from src.core.bias_probe import probe_checkpoint
    probe = ProbeConfig(enabled=True, pairs=args.pairs, rollouts=args.rollouts, rollout_len=args.rollout_len)
    for report in probe_checkpoint(args.checkpoint, args.scenario, probe, seed=args.seed):
        print(f"agent {report.agent}: estimated {report.mean_estimated_q:.4f} "
              f"true {report.mean_true_q:.4f} bias {report.bias:+.4f} (n={report.sample_count})")
    return EXIT_OK


def cmd_report(args) -> int:
    from src.core.harness import report
    for summary in report(args.runs, out=args.out):
        print(f"{summary.label}: final {summary.final_mean} ci95 {summary.final_ci95} "
              f"seeds {len(summary.outcomes)}")
    return EXIT_OK


def cmd_tournament(args) -> int:
    from src.core.harness import tournament
    config = _load_config(args.config)
    result = tournament(config, args.algorithms, out=args.out)
    names = result["algorithms"]
    print("team \\ adversary  " + "  ".join(f"{n:>8}" for n in names))
    for r, team in enumerate(names):
        print(f"{team:>17}  " + "  ".join(f"{v:8.3f}" for v in result["normalized"][r]))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="MATD3 Lab - multi-agent actor-critic experiments on particle worlds",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python main.py train --config config/experiments/cooperative_navigation_matd3.json
  python main.py train --config exp.json --seed-override 3 --out runs/debug
  python main.py grid --config exp.json --axes config/experiments/grid_axes.json
  python main.py probe --checkpoint runs/experiment/seed_0/checkpoint --scenario cooperative_navigation
  python main.py report --runs runs/maddpg runs/matd3
  python main.py tournament --config config/experiments/predator_prey.json

Exit codes: 0 success, 2 configuration error, 3 runtime failure in any seed.
Set MATD3_LAB_OUTPUT_ROOT to move the default output root.
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Enable verbose debug logging')
    parser.add_argument('--daemon', '-d', action='store_true', help='Log to a rotating file instead of the terminal')
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="Train every seed of an experiment")
    train.add_argument("--config", "-c", required=True, help="Experiment JSON file")
    train.add_argument("--seed-override", type=int, default=None, help="Run only this seed")
    train.add_argument("--out", default=None, help="Output directory (overrides output_dir)")
    train.add_argument("--dump-trajectory", action="store_true", help="Write a per-step trajectory CSV")
    train.set_defaults(handler=cmd_train)

    grid = sub.add_parser("grid", help="Grid search over hyperparameter axes")
    grid.add_argument("--config", "-c", required=True, help="Base experiment JSON file")
    grid.add_argument("--axes", required=True, help="JSON object: axis name -> list of values")
    grid.add_argument("--out", default=None, help="Output directory")
    grid.set_defaults(handler=cmd_grid)

    probe = sub.add_parser("probe", help="Measure critic bias of a saved checkpoint")
    probe.add_argument("--checkpoint", required=True, help="Checkpoint directory with manifest.json")
    probe.add_argument("--scenario", required=True, help="Scenario id the checkpoint was trained on")
    probe.add_argument("--pairs", type=int, default=100, help="State-action pairs to probe")
    probe.add_argument("--rollouts", type=int, default=200, help="Monte-Carlo rollouts per pair")
    probe.add_argument("--rollout-len", type=int, default=100, help="Steps per rollout")
    probe.add_argument("--seed", type=int, default=0, help="Probe seed")
    probe.set_defaults(handler=cmd_probe)

    report = sub.add_parser("report", help="Aggregate completed runs")
    report.add_argument("--runs", nargs="+", required=True, help="Run directories")
    report.add_argument("--out", default=None, help="Directory for report files")
    report.set_defaults(handler=cmd_report)

    tour = sub.add_parser("tournament", help="All team/adversary algorithm pairings")
    tour.add_argument("--config", "-c", required=True, help="Base experiment JSON (adversarial scenario)")
    tour.add_argument("--algorithms", nargs="+", default=["maddpg", "matd3"], help="Algorithms to pair")
    tour.add_argument("--out", default=None, help="Output directory")
    tour.set_defaults(handler=cmd_tournament)
    return parser


def main(argv=None) -> int:
    """
    Main entry point; returns the process exit code
    """
    global logger
    args = build_parser().parse_args(argv)

    if args.verbose:
        set_level("DEBUG")
    if args.daemon:
        setup_background_logging()
    else:
        LoggerMode.set_mode(LoggerMode.TERMINAL)
    logger = setup_logger("MATD3Lab")
    logger.info(f"MATD3 Lab {LabSettings.BUILD_ID}: {args.command}")

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return EXIT_CONFIG
    except LabError as e:
        logger.error(f"Run failed: {e}")
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        logger.warning("Interrupted by user")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
