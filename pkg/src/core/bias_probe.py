"""
Overestimation probe - critic estimates against Monte-Carlo returns
States and actions written since the last evaluation are replayed from their
stored World snapshot with deterministic policies; the discounted return is
compared with Q_{i,1}
"""

from collections import defaultdict
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import HyperParams, ProbeConfig
from src.core.learners import critic_inputs, select_actions
from src.core.particle_env import MarkovGame, ParticleEnv
from src.core.replay_buffer import ReplayBuffer
from src.core.tensor_nn import forward
from src.models.agent import AgentBundle
from src.models.common import BiasReport, ProbeState, Transition
from src.models.world import JointAction
from src.utils.checkpoint import load_checkpoint
from src.utils.logger import ComponentLogger
from src.utils.logging import TrainingLogger
from src.utils.rng import SeededRng
from src.utils.stats import mean_ci95
from src.utils.validation import EmptyProbeWindowError, SnapshotRestoreError, ValidationError

logger = ComponentLogger("BiasProbe")

DEFAULT_PAIRS = 100
DEFAULT_ROLLOUTS = 200
DEFAULT_ROLLOUT_LEN = 100


def collect_probe_states(buffer: ReplayBuffer, last_eval_marker: int, rng: SeededRng,
                         pairs: int = DEFAULT_PAIRS) -> Tuple[List[ProbeState], int]:
    """
    Uniform sample of up to `pairs` transitions written after the marker.
    Returns the probe states and the advanced marker.
    """
    slots = buffer.slots_since(last_eval_marker)
    if slots.size == 0:
        raise EmptyProbeWindowError(
            f"no transitions written since marker {last_eval_marker}; "
            f"use a longer evaluation interval"
        )
    if slots.size > pairs:
        slots = np.sort(rng.choice(slots, size=pairs, replace=False))
    states = []
    for slot in slots:
        transition = buffer.get(int(slot))
        if transition.world is None:
            raise SnapshotRestoreError(
                f"buffer slot {int(slot)} has no World snapshot; the buffer must store worlds for probing"
            )
        states.append(ProbeState(transition.observations, transition.actions,
                                 transition.world, buffer.tag_of(int(slot))))
    return states, buffer.total_written


def monte_carlo_returns(env: MarkovGame, snapshot, start_actions: Sequence[np.ndarray],
                        bundles: Sequence[AgentBundle], gamma: float,
                        n_rollouts: int = DEFAULT_ROLLOUTS, rollout_len: int = DEFAULT_ROLLOUT_LEN,
                        rng: Optional[SeededRng] = None,
                        temperature: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """
    Mean over rollouts of sum_{t < rollout_len} gamma^t r_t for every agent,
    with the first joint action forced and deterministic policies afterwards.
    Returns (mean per agent, standard error per agent). A deterministic
    environment needs a single rollout.
    """
    if n_rollouts < 1 or rollout_len < 1:
        raise ValidationError("rollouts and rollout length must be positive")
    runs = 1 if env.deterministic else n_rollouts
    returns = np.zeros((runs, env.n_agents))
    for k in range(runs):
        stream = rng.fork(f"rollout{k}") if rng is not None else None
        world = env.restore(snapshot, rollout_len)
        action = JointAction.from_vectors(start_actions, env.action_specs)
        discount = 1.0
        for _ in range(rollout_len):
            result = env.step(world, action, stream)
            returns[k] += discount * np.asarray(result.rewards, dtype=np.float64)
            discount *= gamma
            if result.done or result.terminal:
                break
            world = result.world
            action = select_actions(bundles, result.observations, 0.0, stream, temperature)
    mean = returns.mean(axis=0)
    if runs < 2:
        return mean, np.zeros(env.n_agents)
    return mean, returns.std(axis=0, ddof=1) / np.sqrt(runs)


def monte_carlo_q(env: MarkovGame, snapshot, start_actions: Sequence[np.ndarray],
                  bundles: Sequence[AgentBundle], gamma: float, agent: int,
                  n_rollouts: int = DEFAULT_ROLLOUTS, rollout_len: int = DEFAULT_ROLLOUT_LEN,
                  rng: Optional[SeededRng] = None) -> float:
    """Monte-Carlo return of one agent"""
    mean, _ = monte_carlo_returns(env, snapshot, start_actions, bundles, gamma,
                                  n_rollouts, rollout_len, rng)
    return float(mean[agent])


def estimated_q(bundle: AgentBundle, probe_states: Sequence[ProbeState]) -> np.ndarray:
    """Q_{i,1}(x, a) for every probe state"""
    n_agents = len(probe_states[0].observations)
    observations = [np.stack([p.observations[j] for p in probe_states]) for j in range(n_agents)]
    actions = [np.stack([p.actions[j] for p in probe_states]) for j in range(n_agents)]
    q, _ = forward(bundle.critics[0], critic_inputs(bundle, observations, actions))
    return q[:, 0]


def bias_report(bundles: Sequence[AgentBundle], probe_states: Sequence[ProbeState], env: MarkovGame,
                gamma: float, eval_step: int = 0, n_rollouts: int = DEFAULT_ROLLOUTS,
                rollout_len: int = DEFAULT_ROLLOUT_LEN, rng: Optional[SeededRng] = None,
                temperature: float = 1.0) -> List[BiasReport]:
    """One BiasReport per agent: mean critic estimate minus mean Monte-Carlo return"""
    if not probe_states:
        raise EmptyProbeWindowError("bias report requested without probe states")
    n = len(probe_states)
    true_q = np.zeros((n, env.n_agents))
    std_err = np.zeros((n, env.n_agents))
    for k, state in enumerate(probe_states):
        stream = rng.fork(f"state{state.tag}") if rng is not None else None
        true_q[k], std_err[k] = monte_carlo_returns(env, state.world, state.actions, bundles, gamma,
                                                    n_rollouts, rollout_len, stream, temperature)
    reports = []
    for bundle in bundles:
        i = bundle.index
        report = BiasReport(
            eval_step=eval_step,
            agent=i,
            mean_estimated_q=float(np.mean(estimated_q(bundle, probe_states))),
            mean_true_q=float(np.mean(true_q[:, i])),
            sample_count=n,
            mc_standard_error=float(np.sqrt(np.sum(std_err[:, i] ** 2)) / n),
        )
        TrainingLogger.log_bias(eval_step, i, report.mean_estimated_q, report.mean_true_q)
        reports.append(report)
    return reports


def aggregate_bias_reports(runs: Sequence[Sequence[BiasReport]]) -> List[BiasReport]:
    """
    Cross-run mean per (eval_step, agent) with a 95% CI over runs.
    The CI is absent when fewer than two runs reported that point.
    """
    grouped: Dict[Tuple[int, int], List[BiasReport]] = defaultdict(list)
    for reports in runs:
        for report in reports:
            grouped[(report.eval_step, report.agent)].append(report)
    out = []
    for (eval_step, agent) in sorted(grouped):
        group = grouped[(eval_step, agent)]
        est, _ = mean_ci95([r.mean_estimated_q for r in group])
        true_q, _ = mean_ci95([r.mean_true_q for r in group])
        _, half_width = mean_ci95([r.bias for r in group])
        out.append(BiasReport(
            eval_step=eval_step,
            agent=agent,
            mean_estimated_q=est,
            mean_true_q=true_q,
            sample_count=sum(r.sample_count for r in group),
            ci95_half_width=half_width,
            mc_standard_error=float(np.sqrt(sum(r.mc_standard_error ** 2 for r in group)) / len(group)),
        ))
    return out


def second_half_bias(reports: Sequence[BiasReport], total_steps: Optional[int] = None) -> Optional[float]:
    """
    Mean bias over evaluations in the second half of training, all agents pooled.
    Without total_steps the last evaluation step stands in for the run length.
    None when no evaluation falls in that half.
    """
    if not reports:
        return None
    horizon = total_steps if total_steps is not None else max(r.eval_step for r in reports)
    late = [r.bias for r in reports if r.eval_step > horizon / 2]
    if not late:
        return None
    return float(np.mean(late))


class BiasProbe:
    """
    Periodic probe driven by the trainer.
    Keeps the evaluation marker and draws from its own rng so training
    streams are untouched.
    """

    def __init__(self, pairs: int, cadence: int, rollouts: int, rollout_len: int,
                 gamma: float, rng: SeededRng, temperature: float = 1.0):
        self.pairs = pairs
        self.cadence = cadence
        self.rollouts = rollouts
        self.rollout_len = rollout_len
        self.gamma = gamma
        self.rng = rng
        self.temperature = temperature
        self.marker = 0
        self.reports: List[BiasReport] = []

    def due(self, env_steps: int) -> bool:
        return env_steps > 0 and env_steps % self.cadence == 0

    def run(self, env_steps: int, buffer: ReplayBuffer, bundles: Sequence[AgentBundle],
            env: MarkovGame) -> List[BiasReport]:
        stream = self.rng.fork(f"eval{env_steps}")
        states, self.marker = collect_probe_states(buffer, self.marker, stream.fork("select"), self.pairs)
        reports = bias_report(bundles, states, env, self.gamma, env_steps, self.rollouts,
                              self.rollout_len, stream.fork("rollouts"), self.temperature)
        self.reports.extend(reports)
        return reports


def probe_checkpoint(directory, scenario_id: str, probe: ProbeConfig, seed: int = 0) -> List[BiasReport]:
    """
    Bias of a saved policy set: fill a fresh buffer with exploration episodes,
    then probe the most recent transitions.
    """
    bundles, manifest = load_checkpoint(directory)
    if manifest["scenario_id"] != scenario_id:
        raise ValidationError(
            f"checkpoint was trained on '{manifest['scenario_id']}', not '{scenario_id}'"
        )
    hp = HyperParams(**manifest["hyperparams"])
    env = ParticleEnv(scenario_id, horizon=hp.steps_per_episode)
    if env.n_agents != len(bundles):
        env = ParticleEnv(scenario_id, horizon=hp.steps_per_episode, num_agents=len(bundles))

    rng = SeededRng(seed)
    buffer = ReplayBuffer(max(probe.pairs, hp.steps_per_episode), env.obs_sizes,
                          [s.size for s in env.action_specs], store_worlds=True)
    env_rng, act_rng = rng.fork("env"), rng.fork("explore")
    while buffer.total_written < probe.pairs:
        world, obs = env.reset(env_rng)
        done = False
        while not done:
            joint = select_actions(bundles, obs, hp.exploration_noise, act_rng, hp.gumbel_temperature)
            result = env.step(world, joint)
            buffer.push(Transition(obs, joint.vectors(), result.rewards, result.observations,
                                   result.done, result.terminal, world))
            world, obs, done = result.world, result.observations, result.done
    states, _ = collect_probe_states(buffer, 0, rng.fork("select"), probe.pairs)
    logger.info(f"Probing {len(states)} state-action pairs from {directory}")
    return bias_report(bundles, states, env, hp.gamma, buffer.total_written, probe.rollouts,
                       probe.rollout_len, rng.fork("rollouts"), hp.gumbel_temperature)
