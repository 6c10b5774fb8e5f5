"""
Training loop - act, store, sample, critic step, delayed policy and target step
One critic update per agent per environment step once the buffer is warm
"""

from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from config.settings import ExperimentConfig, HyperParams, LabSettings, ProbeConfig
from src.core.bias_probe import BiasProbe
from src.core.learners import agent_update, make_bundles, select_actions
from src.core.particle_env import MarkovGame, ParticleEnv
from src.core.replay_buffer import ReplayBuffer
from src.models.agent import AgentBundle
from src.models.common import BiasReport, EpisodeRecord, MetricsRow, Transition
from src.models.types import Algorithm
from src.utils.csv_io import TrajectoryRecorder, render_csv, write_csv
from src.utils.logger import ComponentLogger
from src.utils.logging import TrainingLogger
from src.utils.performance import ProfilerManager, StepRateMonitor
from src.utils.rng import SeededRng
from src.utils.validation import LabError, TrainingError, ValidationError

logger = ComponentLogger("Trainer")

METRICS_COLUMNS = [
    "episode", "step", "agent", "episodic_reward", "critic_loss_1", "critic_loss_2",
    "policy_grad_norm", "critic_updates", "policy_updates", "target_updates",
]
BIAS_COLUMNS = ["eval_step", "agent", "mean_estimated", "mean_true", "bias", "ci95", "n", "mc_se"]


class MetricsLog:
    """
    Per-episode, per-agent training metrics plus probe reports.
    Rows contain no timings so identical seeds give identical files.
    """

    def __init__(self, n_agents: int):
        self.n_agents = n_agents
        self.rows: List[MetricsRow] = []
        self.episodes: List[EpisodeRecord] = []
        self.bias_reports: List[BiasReport] = []

    def add_episode(self, record: EpisodeRecord, rows: Sequence[MetricsRow]):
        self.episodes.append(record)
        self.rows.extend(rows)

    def team_curve(self, agents: Optional[Sequence[int]] = None) -> List[float]:
        """Mean episodic return over the given agents (all by default) per episode"""
        if agents is None:
            return [e.team_return for e in self.episodes]
        return [float(np.mean(e.returns[list(agents)])) for e in self.episodes]

    def agent_returns(self, agent: int) -> List[float]:
        return [float(e.returns[agent]) for e in self.episodes]

    def last(self, agent: int) -> Optional[MetricsRow]:
        for row in reversed(self.rows):
            if row.agent == agent:
                return row
        return None

    def metrics_csv(self, config_hash: str, build_id: Optional[str] = None) -> str:
        return render_csv(METRICS_COLUMNS, (asdict(r) for r in self.rows), config_hash, build_id)

    def write(self, path, config_hash: str, build_id: Optional[str] = None) -> Path:
        return write_csv(path, METRICS_COLUMNS, (asdict(r) for r in self.rows), config_hash, build_id)

    def write_bias(self, path, config_hash: str, build_id: Optional[str] = None) -> Path:
        rows = [{
            "eval_step": r.eval_step, "agent": r.agent, "mean_estimated": r.mean_estimated_q,
            "mean_true": r.mean_true_q, "bias": r.bias, "ci95": r.ci95_half_width,
            "n": r.sample_count, "mc_se": r.mc_standard_error,
        } for r in self.bias_reports]
        return write_csv(path, BIAS_COLUMNS, rows, config_hash, build_id)


def agent_algorithms(env: MarkovGame, team: Algorithm, adversary: Optional[Algorithm] = None) -> List[Algorithm]:
    """Algorithm of every agent; adversarial agents use the adversary algorithm"""
    adversary = adversary or team
    return [adversary if is_adv else team for is_adv in env.adversary_mask]


def _mean_or_none(values: List[float]) -> Optional[float]:
    return float(np.mean(values)) if values else None


class Trainer:
    """
    Runs the off-policy loop for one seed.
    Separate forked streams drive placement, exploration, minibatch sampling,
    target smoothing and the probe.
    """

    def __init__(self, env: MarkovGame, algorithms: Sequence[Algorithm], hp: HyperParams, seed: int,
                 probe: Optional[ProbeConfig] = None, bundles: Optional[List[AgentBundle]] = None,
                 trajectory: Optional[TrajectoryRecorder] = None, log_interval: Optional[int] = None):
        if len(algorithms) != env.n_agents:
            raise ValueError(f"need one algorithm per agent ({env.n_agents}), got {len(algorithms)}")
        self.env = env
        self.hp = hp
        self.seed = seed
        self.rng = SeededRng(seed)
        self.env_rng = self.rng.fork("env")
        self.explore_rng = self.rng.fork("explore")
        self.sample_rng = self.rng.fork("sample")
        self.smoothing_rng = self.rng.fork("smoothing")

        self.bundles = bundles if bundles is not None else make_bundles(
            algorithms, env.obs_sizes, env.action_specs, hp, self.rng.fork("init"))
        probe = probe or ProbeConfig()
        self.buffer = ReplayBuffer(hp.buffer_capacity, env.obs_sizes,
                                   [s.size for s in env.action_specs], store_worlds=probe.enabled)
        self.probe = None
        if probe.enabled:
            self.probe = BiasProbe(probe.pairs, probe.cadence, probe.rollouts, probe.rollout_len,
                                   hp.gamma, self.rng.fork("probe"), hp.gumbel_temperature)
        self.warmup = hp.learning_threshold()
        if hp.buffer_capacity < self.warmup:
            raise ValidationError(f"buffer capacity {hp.buffer_capacity} never reaches the learning "
                                  f"threshold {self.warmup}")
        self.trajectory = trajectory
        self.log_interval = log_interval or LabSettings.LOGGING.episode_log_interval
        self.profiler = ProfilerManager()
        self.rate = StepRateMonitor()
        self.env_steps = 0
        self.metrics = MetricsLog(env.n_agents)

    def _learn(self, episode: int, step: int, accumulators: Dict[int, Dict[str, List[float]]]):
        for agent in range(len(self.bundles)):
            try:
                batch = self.buffer.sample(self.hp.batch_size, self.sample_rng)
                stats = agent_update(self.bundles, agent, batch, self.hp, self.smoothing_rng)
            except LabError as e:
                raise TrainingError(f"update failed: {e}", episode, step, agent) from e
            for key, value in stats.items():
                if value is not None:
                    accumulators[agent][key].append(value)

    def run_episode(self, episode: int):
        """One episode of acting and learning; appends its metrics rows"""
        hp = self.hp
        world, obs = self.env.reset(self.env_rng)
        returns = np.zeros(self.env.n_agents)
        accumulators = {i: {"critic_loss_1": [], "critic_loss_2": [], "policy_grad_norm": []}
                        for i in range(self.env.n_agents)}
        self.rate.start_episode()
        steps = 0
        done = False
        while not done:
            try:
                with self.profiler.get_timer("act"):
                    joint = select_actions(self.bundles, obs, hp.exploration_noise,
                                           self.explore_rng, hp.gumbel_temperature)
                with self.profiler.get_timer("env"):
                    result = self.env.step(world, joint)
            except LabError as e:
                raise TrainingError(f"acting failed: {e}", episode, steps) from e

            self.buffer.push(Transition(
                observations=obs, actions=joint.vectors(), rewards=result.rewards,
                next_observations=result.observations, done=result.done,
                terminal=result.terminal, world=world if self.buffer.store_worlds else None,
            ))
            if self.trajectory is not None:
                self.trajectory.record(episode, result.world, joint.vectors(), result.rewards)
            returns += result.rewards
            self.env_steps += 1
            steps += 1

            if len(self.buffer) >= self.warmup:
                with self.profiler.get_timer("update"):
                    self._learn(episode, steps, accumulators)
            if self.probe is not None and self.probe.due(self.env_steps):
                with self.profiler.get_timer("probe"):
                    try:
                        self.metrics.bias_reports.extend(
                            self.probe.run(self.env_steps, self.buffer, self.bundles, self.env))
                    except LabError as e:
                        raise TrainingError(f"bias probe failed: {e}", episode, steps) from e

            world, obs = result.world, result.observations
            done = result.done or result.terminal
        self.rate.end_episode(steps)

        rows = []
        for i, bundle in enumerate(self.bundles):
            acc = accumulators[i]
            rows.append(MetricsRow(
                episode=episode,
                step=self.env_steps,
                agent=i,
                episodic_reward=float(returns[i]),
                critic_loss_1=_mean_or_none(acc["critic_loss_1"]),
                critic_loss_2=_mean_or_none(acc["critic_loss_2"]),
                policy_grad_norm=_mean_or_none(acc["policy_grad_norm"]),
                critic_updates=bundle.clock.critic_updates,
                policy_updates=bundle.clock.policy_updates,
                target_updates=bundle.clock.target_updates,
            ))
        self.metrics.add_episode(EpisodeRecord(episode, returns), rows)

    def train(self, episodes: Optional[int] = None) -> MetricsLog:
        episodes = episodes or self.hp.episodes
        logger.info(f"Training {[b.algorithm.value for b in self.bundles]} for {episodes} episodes (seed {self.seed})")
        for episode in range(episodes):
            self.run_episode(episode)
            if (episode + 1) % self.log_interval == 0 or episode + 1 == episodes:
                clock = self.bundles[0].clock
                TrainingLogger.log_episode(episode + 1, self.env_steps, self.metrics.episodes[-1].team_return,
                                           clock.critic_updates, clock.policy_updates,
                                           self.rate.steps_per_second())
        for bundle in self.bundles:
            if not bundle.clock.consistent():
                raise TrainingError("update clock out of cadence", episodes, self.env_steps, bundle.index)
        logger.debug(f"Section timings: {self.profiler.get_all_stats()}")
        return self.metrics


def build_env(config: ExperimentConfig) -> ParticleEnv:
    return ParticleEnv(config.scenario_id, horizon=config.hyperparams.steps_per_episode,
                       num_agents=config.num_agents)


def train(scenario_id: str, algorithm: Algorithm, hp: HyperParams, seed: int,
          probe: Optional[ProbeConfig] = None, adversary_algorithm: Optional[Algorithm] = None,
          num_agents: Optional[int] = None) -> MetricsLog:
    """Train one seed from scratch and return its metrics"""
    env = ParticleEnv(scenario_id, horizon=hp.steps_per_episode, num_agents=num_agents)
    trainer = Trainer(env, agent_algorithms(env, Algorithm(algorithm), adversary_algorithm), hp, seed, probe)
    return trainer.train()


def evaluate(bundles: Sequence[AgentBundle], env: MarkovGame, episodes: int, rng: SeededRng,
             temperature: float = 1.0) -> np.ndarray:
    """Mean undiscounted per-agent return of noise-free episodes"""
    totals = np.zeros(env.n_agents)
    for _ in range(episodes):
        world, obs = env.reset(rng)
        done = False
        while not done:
            result = env.step(world, select_actions(bundles, obs, 0.0, rng, temperature))
            totals += result.rewards
            world, obs = result.world, result.observations
            done = result.done or result.terminal
    return totals / episodes


def random_action(spec, rng: SeededRng) -> np.ndarray:
    """Uniform movement in [-1, 1]^2 and a uniformly chosen one-hot message"""
    move = rng.uniform(-1.0, 1.0, size=spec.move_dim)
    comm = np.zeros(spec.comm_dim)
    if spec.comm_dim:
        comm[int(rng.integers(0, spec.comm_dim))] = 1.0
    return np.concatenate([move, comm])


def random_baseline(env: MarkovGame, episodes: int, rng: SeededRng) -> np.ndarray:
    """Mean per-agent return of a uniform-random policy"""
    totals = np.zeros(env.n_agents)
    for _ in range(episodes):
        world, _ = env.reset(rng)
        done = False
        while not done:
            result = env.step(world, [random_action(s, rng) for s in env.action_specs])
            totals += result.rewards
            world = result.world
            done = result.done or result.terminal
    return totals / episodes
