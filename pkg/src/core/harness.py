"""
Experiment harness - seeds, grid search, tournaments and cross-seed aggregation
Each seed writes under <output_dir>/seed_<k>/; aggregation only ever reads
completed seed outputs
"""

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from config.settings import ExperimentConfig, HyperParams, LabSettings
from src.core.bias_probe import aggregate_bias_reports, second_half_bias
from src.core.trainer import Trainer, agent_algorithms, build_env, evaluate, random_baseline
from src.models.common import BiasReport, GridEntry, RunSummary, SeedOutcome
from src.models.types import Algorithm
from src.utils.checkpoint import save_checkpoint
from src.utils.csv_io import TrajectoryRecorder, read_csv, write_csv
from src.utils.logger import ComponentLogger, run_log
from src.utils.logging import LoggingUtils, PerformanceTracker, TrainingLogger
from src.utils.rng import SeededRng
from src.utils.stats import final_window_mean, mean_ci95, normalized_improvement, trailing_mean
from src.utils.validation import ConfigError, MissingSeedError, ValidationError

logger = ComponentLogger("Harness")

GRID_AXES = set(HyperParams.model_fields) | {"num_agents"}
PLOT_COLUMNS = ["series", "x", "mean", "ci_lo", "ci_hi"]
REPORT_COLUMNS = ["label", "algorithm", "config_hash", "seeds", "final_mean", "ci95",
                  "random_baseline", "improvement", "bias_second_half"]
BIAS_COMPARISON_COLUMNS = ["label_a", "label_b", "paired_seeds", "a_lower", "mean_difference"]


def resolve_output_dir(config: ExperimentConfig, override: Optional[str] = None) -> Path:
    """--out wins; otherwise relative output_dir resolves under the output root"""
    if override:
        return Path(override)
    path = Path(config.output_dir)
    return path if path.is_absolute() else LabSettings.output_root() / path


def aggregate_ci(values: Sequence[float]):
    """Cross-seed mean and 95% CI half-width (None below two seeds)"""
    return mean_ci95(values)


def team_agents(config: ExperimentConfig) -> List[int]:
    """Indices of the non-adversarial agents (all agents if every one is adversarial)"""
    mask = build_env(config).adversary_mask
    team = [i for i, is_adv in enumerate(mask) if not is_adv]
    return team or list(range(len(mask)))


def run_seed(config_data: Dict[str, Any], seed: int, out_dir: str,
             dump_trajectory: bool = False) -> SeedOutcome:
    """Train one seed and write its artifacts; failures are captured, not raised"""
    config = ExperimentConfig.from_dict(config_data)
    seed_dir = Path(out_dir) / f"seed_{seed}"
    seed_dir.mkdir(parents=True, exist_ok=True)
    config_hash = config.config_hash()
    started = time.perf_counter()
    try:
        env = build_env(config)
        team, adversary = config.team_adversary_algorithms()
        recorder = None
        if dump_trajectory:
            recorder = TrajectoryRecorder(seed_dir / "trajectory.csv", env.n_agents, env.n_landmarks,
                                          [s.size for s in env.action_specs], config_hash)
        trainer = Trainer(env, agent_algorithms(env, team, adversary), config.hyperparams, seed,
                          probe=config.probe, trajectory=recorder)
        with PerformanceTracker("Harness", f"seed {seed}") as tracker:
            metrics = trainer.train()
            tracker.add_data("env_steps", trainer.env_steps)
        metrics.write(seed_dir / "metrics.csv", config_hash)
        if config.probe.enabled:
            metrics.write_bias(seed_dir / "bias.csv", config_hash)
        if recorder is not None:
            recorder.flush()
        save_checkpoint(seed_dir / "checkpoint", trainer.bundles, config.scenario_id,
                        config.hyperparams.model_dump(mode="json"), config_hash)
        team_idx = team_agents(config)
        curve = metrics.team_curve(team_idx)
        final = final_window_mean(curve, config.reward_window)
        # labelled forks, independent of the training streams
        rng = SeededRng(seed)
        baseline = float(np.mean(random_baseline(env, config.eval_episodes, rng.fork("baseline"))[team_idx]))
        eval_reward = float(np.mean(evaluate(trainer.bundles, env, config.eval_episodes, rng.fork("evaluation"),
                                             config.hyperparams.gumbel_temperature)[team_idx]))
        TrainingLogger.log_seed_outcome(seed, True, f"{final:.4f} (random baseline {baseline:.4f})")
        return SeedOutcome(seed=seed, ok=True, final_reward=final, curve=curve,
                           bias=list(metrics.bias_reports),
                           wall_clock_s=time.perf_counter() - started, output_dir=str(seed_dir),
                           random_baseline=baseline, eval_reward=eval_reward)
    except Exception as e:
        TrainingLogger.log_seed_outcome(seed, False, str(e))
        return SeedOutcome(seed=seed, ok=False, wall_clock_s=time.perf_counter() - started,
                           output_dir=str(seed_dir), error=f"{type(e).__name__}: {e}")


def summarize(config: ExperimentConfig, outcomes: List[SeedOutcome]) -> RunSummary:
    summary = RunSummary(label=config.label, config_hash=config.config_hash(), outcomes=outcomes)
    if summary.finals:
        summary.final_mean, summary.final_ci95 = aggregate_ci(summary.finals)
    summary.extra["algorithm"] = config.algorithm.value
    bias_runs = [o.bias for o in outcomes if o.ok and o.bias]
    if bias_runs:
        summary.extra["bias"] = aggregate_bias_reports(bias_runs)

    total_steps = config.hyperparams.episodes * config.hyperparams.steps_per_episode
    late_bias = {}
    improvements = {}
    for o in outcomes:
        if not o.ok:
            continue
        late = second_half_bias(o.bias, total_steps)
        if late is not None:
            late_bias[o.seed] = late
        if o.final_reward is not None and o.random_baseline is not None:
            gain = normalized_improvement(o.final_reward, o.random_baseline)
            if gain is not None:
                improvements[o.seed] = gain
    summary.extra["bias_second_half_by_seed"] = late_bias
    summary.extra["improvement_by_seed"] = improvements
    summary.extra["bias_second_half"] = float(np.mean(list(late_bias.values()))) if late_bias else None
    summary.extra["improvement"] = float(np.mean(list(improvements.values()))) if improvements else None
    baselines = [o.random_baseline for o in outcomes if o.ok and o.random_baseline is not None]
    summary.extra["random_baseline"] = float(np.mean(baselines)) if baselines else None
    return summary


def write_summary(summary: RunSummary, out_dir: Path) -> Path:
    late_bias = summary.extra.get("bias_second_half_by_seed", {})
    improvements = summary.extra.get("improvement_by_seed", {})
    data = {
        "label": summary.label,
        "algorithm": summary.extra.get("algorithm"),
        "config_hash": summary.config_hash,
        "build_id": LabSettings.BUILD_ID,
        "final_mean": summary.final_mean,
        "final_ci95": summary.final_ci95,
        "random_baseline": summary.extra.get("random_baseline"),
        "improvement": summary.extra.get("improvement"),
        "bias_second_half": summary.extra.get("bias_second_half"),
        "failed_seeds": summary.failed_seeds,
        "seeds": [{
            "seed": o.seed, "ok": o.ok, "final_reward": o.final_reward,
            "random_baseline": o.random_baseline, "eval_reward": o.eval_reward,
            "improvement": improvements.get(o.seed), "bias_second_half": late_bias.get(o.seed),
            "wall_clock_s": round(o.wall_clock_s, 3), "error": o.error,
        } for o in summary.outcomes],
    }
    path = out_dir / "summary.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
    return path


def run(config: ExperimentConfig, out: Optional[str] = None, dump_trajectory: bool = False) -> RunSummary:
    """
    Train every seed of the config, then aggregate.
    A failing seed is recorded and the remaining seeds still run.
    """
    out_dir = resolve_output_dir(config, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config.to_file(out_dir / "config.json")
    data = config.model_dump(mode="json")
    with run_log(out_dir):
        LoggingUtils.log_info("Harness", f"Run '{config.label}'",
                              {"scenario": config.scenario_id, "seeds": config.seeds, "out": out_dir})

        if config.workers > 1 and len(config.seeds) > 1:
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(run_seed, data, seed, str(out_dir), dump_trajectory)
                           for seed in config.seeds]
                outcomes = [f.result() for f in futures]
        else:
            outcomes = [run_seed(data, seed, str(out_dir), dump_trajectory) for seed in config.seeds]

        summary = summarize(config, outcomes)
        write_summary(summary, out_dir)
        emit_plot_data([summary], out_dir / "plot_data.csv", config.reward_window, config.config_hash())
        if summary.failed_seeds:
            logger.error(f"{len(summary.failed_seeds)} seed(s) failed: {summary.failed_seeds}")
    return summary


def expand_grid(base_config: ExperimentConfig, axes: Dict[str, Sequence[Any]]) -> List[Dict[str, Any]]:
    """Cartesian product of the axes, validated before anything runs"""
    unknown = sorted(set(axes) - GRID_AXES)
    if unknown:
        raise ConfigError(f"unknown grid axes {unknown}; valid axes: {sorted(GRID_AXES)}")
    for name, values in axes.items():
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid axis '{name}' needs a nonempty list of values")
    names = list(axes)
    points = [dict(zip(names, combo)) for combo in itertools.product(*(axes[n] for n in names))]
    for point in points:
        base_config.with_overrides(**point)
    return points


def grid_search(base_config: ExperimentConfig, axes: Dict[str, Sequence[Any]],
                out: Optional[str] = None) -> List[GridEntry]:
    """Run every grid point and rank by mean final reward (best first)"""
    points = expand_grid(base_config, axes)
    out_dir = resolve_output_dir(base_config, out)
    logger.info(f"Grid search over {list(axes)}: {len(points)} configurations")
    entries = []
    for k, point in enumerate(points):
        config = base_config.with_overrides(**point)
        summary = run(config, out=str(out_dir / f"grid_{k:03d}"))
        entries.append(GridEntry(rank=0, overrides=point, summary=summary))
    ordered = sorted(enumerate(entries), key=lambda ke: (-ke[1].mean_final, ke[0]))
    ranked = []
    for rank, (_, entry) in enumerate(ordered, start=1):
        entry.rank = rank
        ranked.append(entry)
    rows = [{
        "rank": e.rank, **e.overrides, "mean_final": e.summary.final_mean,
        "ci95": e.summary.final_ci95, "failed_seeds": len(e.summary.failed_seeds),
    } for e in ranked]
    write_csv(out_dir / "grid.csv", ["rank", *axes.keys(), "mean_final", "ci95", "failed_seeds"],
              rows, base_config.config_hash())
    return ranked


def normalize_scores(team_rewards) -> np.ndarray:
    """
    Affine rescale so the smallest entry maps to 0 and the largest to 1.
    A constant table maps to 0.5 everywhere with a warning.
    """
    table = np.asarray(team_rewards, dtype=np.float64)
    lo, hi = float(np.min(table)), float(np.max(table))
    if hi == lo:
        logger.warning(f"degenerate score table (all entries {lo}); reporting 0.5")
        return np.full(table.shape, 0.5)
    return (table - lo) / (hi - lo)


def tournament(base_config: ExperimentConfig, algorithms: Sequence[Algorithm],
               out: Optional[str] = None) -> Dict[str, Any]:
    """
    Every (team, adversary) pairing on an adversarial scenario.
    Returns the raw team final-reward matrix (rows team, columns adversary)
    and its 0-1 normalized form.
    """
    if not any(build_env(base_config).adversary_mask):
        raise ValidationError(f"scenario '{base_config.scenario_id}' has no adversaries to pair against")
    algorithms = [Algorithm(a) for a in algorithms]
    out_dir = resolve_output_dir(base_config, out)
    raw = np.full((len(algorithms), len(algorithms)), np.nan)
    for r, team in enumerate(algorithms):
        for c, adversary in enumerate(algorithms):
            data = base_config.model_dump(mode="json")
            data.update(algorithm=team.value, adversary_algorithm=adversary.value,
                        label=f"{base_config.label}_{team.value}_vs_{adversary.value}")
            summary = run(ExperimentConfig.from_dict(data), out=str(out_dir / f"{team.value}_vs_{adversary.value}"))
            if summary.final_mean is None:
                raise ValidationError(f"pairing {team.value} vs {adversary.value} produced no successful seed")
            raw[r, c] = summary.final_mean
    normalized = normalize_scores(raw)
    rows = [{"team": team.value, "adversary": adversary.value, "final_reward": raw[r, c],
             "normalized": normalized[r, c]}
            for r, team in enumerate(algorithms) for c, adversary in enumerate(algorithms)]
    write_csv(out_dir / "tournament.csv", ["team", "adversary", "final_reward", "normalized"],
              rows, base_config.config_hash())
    return {"algorithms": [a.value for a in algorithms], "raw": raw, "normalized": normalized}


def _band(values: List[float]):
    mean, half = aggregate_ci(values)
    half = 0.0 if half is None else half
    return mean, mean - half, mean + half


def plot_rows(summaries: Sequence[RunSummary], window: int) -> List[Dict[str, Any]]:
    """Long-format series: smoothed reward per episode and bias per evaluation step"""
    rows = []
    for summary in summaries:
        curves = [trailing_mean(o.curve, window) for o in summary.outcomes if o.ok and o.curve]
        if curves:
            length = min(len(c) for c in curves)
            for x in range(length):
                mean, lo, hi = _band([float(c[x]) for c in curves])
                rows.append({"series": f"{summary.label}/reward", "x": x, "mean": mean, "ci_lo": lo, "ci_hi": hi})
        per_point: Dict[tuple, List[float]] = {}
        for outcome in summary.outcomes:
            if not outcome.ok:
                continue
            for report in outcome.bias:
                per_point.setdefault((report.agent, report.eval_step), []).append(report.bias)
        for (agent, eval_step) in sorted(per_point):
            mean, lo, hi = _band(per_point[(agent, eval_step)])
            rows.append({"series": f"{summary.label}/bias/agent{agent}", "x": eval_step,
                         "mean": mean, "ci_lo": lo, "ci_hi": hi})
    return rows


def emit_plot_data(summaries: Sequence[RunSummary], path, window: int = 1000,
                   config_hash: Optional[str] = None) -> Path:
    """Write plot-ready long-format CSV"""
    if not summaries:
        raise ValidationError("emit_plot_data needs at least one summary")
    config_hash = config_hash or summaries[0].config_hash
    return write_csv(path, PLOT_COLUMNS, plot_rows(summaries, window), config_hash,
                     comments=[f"trailing window {window} episodes"])


def load_run(run_dir) -> RunSummary:
    """
    Rebuild a RunSummary from a run directory's config and per-seed metrics.
    Every listed seed must have its metrics file.
    """
    run_dir = Path(run_dir)
    config = ExperimentConfig.from_file(run_dir / "config.json")
    team = team_agents(config)
    recorded = _recorded_seeds(run_dir / "summary.json")
    outcomes = []
    for seed in config.seeds:
        metrics_path = run_dir / f"seed_{seed}" / "metrics.csv"
        if not metrics_path.exists():
            raise MissingSeedError(f"seed {seed} listed in {run_dir / 'config.json'} has no {metrics_path.name}")
        _, rows = read_csv(metrics_path)
        by_episode: Dict[int, List[float]] = {}
        for row in rows:
            if int(row["agent"]) in team:
                by_episode.setdefault(int(row["episode"]), []).append(float(row["episodic_reward"]))
        curve = [float(np.mean(by_episode[e])) for e in sorted(by_episode)]
        bias = []
        bias_path = run_dir / f"seed_{seed}" / "bias.csv"
        if bias_path.exists():
            _, bias_rows = read_csv(bias_path)
            bias = [BiasReport(eval_step=int(r["eval_step"]), agent=int(r["agent"]),
                               mean_estimated_q=float(r["mean_estimated"]), mean_true_q=float(r["mean_true"]),
                               sample_count=int(r["n"]), mc_standard_error=float(r["mc_se"] or 0.0))
                    for r in bias_rows]
        final = final_window_mean(curve, config.reward_window) if curve else None
        extras = recorded.get(seed, {})
        outcomes.append(SeedOutcome(seed=seed, ok=bool(curve), final_reward=final, curve=curve,
                                    bias=bias, output_dir=str(metrics_path.parent),
                                    random_baseline=extras.get("random_baseline"),
                                    eval_reward=extras.get("eval_reward")))
    return summarize(config, outcomes)


def _recorded_seeds(summary_path: Path) -> Dict[int, Dict[str, Any]]:
    """Per-seed entries of a summary.json, empty when absent or unreadable"""
    if not summary_path.exists():
        return {}
    try:
        with open(summary_path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"ignoring unreadable {summary_path}: {e}")
        return {}
    return {int(entry["seed"]): entry for entry in data.get("seeds", [])}


def paired_bias_comparison(a: RunSummary, b: RunSummary) -> Optional[Dict[str, Any]]:
    """
    Second-half bias of two runs over the seeds both probed.
    a_lower counts seeds where run a's bias is below run b's.
    """
    late_a = a.extra.get("bias_second_half_by_seed", {})
    late_b = b.extra.get("bias_second_half_by_seed", {})
    seeds = sorted(set(late_a) & set(late_b))
    if not seeds:
        return None
    diffs = [late_a[s] - late_b[s] for s in seeds]
    return {"label_a": a.label, "label_b": b.label, "paired_seeds": len(seeds),
            "a_lower": sum(1 for d in diffs if d < 0.0), "mean_difference": float(np.mean(diffs))}


def report(run_dirs: Sequence, out: Optional[str] = None) -> List[RunSummary]:
    """
    Aggregate completed runs: report.csv (final reward, random baseline,
    normalized improvement, second-half bias), pairwise bias comparisons
    and a combined plot-data file
    """
    summaries = [load_run(d) for d in run_dirs]
    target = Path(out) if out else Path(run_dirs[0]).parent
    rows = [{"label": s.label, "algorithm": s.extra.get("algorithm"), "config_hash": s.config_hash,
             "seeds": len(s.outcomes), "final_mean": s.final_mean, "ci95": s.final_ci95,
             "random_baseline": s.extra.get("random_baseline"), "improvement": s.extra.get("improvement"),
             "bias_second_half": s.extra.get("bias_second_half")} for s in summaries]
    combined_hash = "+".join(s.config_hash for s in summaries)
    write_csv(target / "report.csv", REPORT_COLUMNS, rows, combined_hash)

    comparisons = [c for a, b in itertools.combinations(summaries, 2)
                   if (c := paired_bias_comparison(a, b)) is not None]
    if comparisons:
        write_csv(target / "bias_comparison.csv", BIAS_COMPARISON_COLUMNS, comparisons, combined_hash)
    emit_plot_data(summaries, target / "report_plot_data.csv", config_hash=combined_hash)
    for s in summaries:
        LoggingUtils.log_info("Harness", f"Report '{s.label}'",
                              {"final_mean": s.final_mean, "ci95": s.final_ci95,
                               "improvement": s.extra.get("improvement"),
                               "bias_second_half": s.extra.get("bias_second_half")})
    for c in comparisons:
        logger.info(f"Second-half bias: '{c['label_a']}' below '{c['label_b']}' in "
                    f"{c['a_lower']}/{c['paired_seeds']} seeds (mean difference {c['mean_difference']:.4f})")
    return summaries
