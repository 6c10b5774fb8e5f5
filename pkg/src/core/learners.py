"""
Learners - MADDPG, MATD3 and independent-learner TD3 updates
Centralized critics read x (all observations) then a_1..a_N in agent order;
local critics read o_i then a_i
"""

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import HyperParams
from src.core.tensor_nn import (
    adam_step, backward, clipped_gaussian, forward, gumbel_softmax,
    init_dense_net, sigmoid_scaled, soft_update, softmax, softmax_backward,
)
from src.models.agent import AgentBundle, UpdateClock
from src.models.common import Batch
from src.models.network import AdamState, DenseNet, ParamGrads, OutputActivation
from src.models.types import Algorithm, CriticScope
from src.models.world import ACTION_HIGH, ACTION_LOW, ActionSpec, JointAction
from src.utils.logger import ComponentLogger
from src.utils.rng import SeededRng
from src.utils.validation import (
    ClockViolationError, DimensionMismatchError, NonFiniteError,
    VariantMismatchError, ValidationUtils,
)

logger = ComponentLogger("Learners")

ACTION_RANGE = ACTION_HIGH - ACTION_LOW


# ---- construction -------------------------------------------------------

def policy_output_activation(spec: ActionSpec) -> OutputActivation:
    """Movement-only policies squash in the net; comm policies squash in the head"""
    if spec.comm_dim == 0:
        return OutputActivation.sigmoid_scaled(ACTION_LOW, ACTION_HIGH)
    return OutputActivation.identity()


def critic_input_size(scope: CriticScope, agent: int, obs_sizes: Sequence[int],
                      action_specs: Sequence[ActionSpec]) -> int:
    if scope is CriticScope.CENTRALIZED:
        return int(sum(obs_sizes) + sum(s.size for s in action_specs))
    return int(obs_sizes[agent] + action_specs[agent].size)


def _critics(n: int, in_size: int, hidden: Sequence[int], rng: SeededRng):
    critics = [init_dense_net([in_size, *hidden, 1], rng) for _ in range(n)]
    return critics, [c.copy() for c in critics], [AdamState.for_net(c) for c in critics]


def make_bundle(agent: int, algorithm: Algorithm, obs_sizes: Sequence[int],
                action_specs: Sequence[ActionSpec], hidden_sizes: Sequence[int],
                rng: SeededRng, policy_delay: int = 1) -> AgentBundle:
    """Fresh bundle with targets initialised as exact copies"""
    spec = action_specs[agent]
    scope = CriticScope.CENTRALIZED if algorithm.centralized else CriticScope.LOCAL
    policy = init_dense_net([obs_sizes[agent], *hidden_sizes, spec.size], rng.fork("policy"),
                            output_activation=policy_output_activation(spec))
    n_critics = 2 if algorithm.twin_critics else 1
    critics, targets, adams = _critics(
        n_critics, critic_input_size(scope, agent, obs_sizes, action_specs),
        hidden_sizes, rng.fork("critics"),
    )
    return AgentBundle(
        index=agent,
        algorithm=algorithm,
        scope=scope,
        obs_dim=int(obs_sizes[agent]),
        action_spec=spec,
        policy=policy,
        policy_target=policy.copy(),
        critics=critics,
        critic_targets=targets,
        policy_adam=AdamState.for_net(policy),
        critic_adams=adams,
        clock=UpdateClock(policy_delay=policy_delay),
    )


def make_bundles(algorithms: Sequence[Algorithm], obs_sizes: Sequence[int],
                 action_specs: Sequence[ActionSpec], hp: HyperParams, rng: SeededRng) -> List[AgentBundle]:
    bundles = [
        make_bundle(i, alg, obs_sizes, action_specs, hp.hidden_sizes, rng.fork(f"agent{i}"), hp.policy_delay)
        for i, alg in enumerate(algorithms)
    ]
    for bundle in bundles:
        logger.debug(f"Agent {bundle.index}: {bundle.algorithm.value}, {len(bundle.critics)} critic(s) "
                     f"over {bundle.critics[0].layer_sizes[0]} inputs")
    return bundles


def il_td3_variant(bundle: AgentBundle, rng: SeededRng) -> AgentBundle:
    """
    Decentralized configuration of a bundle: twin critics over (o_i, a_i) only.
    The policy, its target and its optimizer state carry over unchanged.
    """
    hidden = bundle.critics[0].layer_sizes[1:-1]
    critics, targets, adams = _critics(2, bundle.obs_dim + bundle.action_dim, hidden, rng.fork("critics"))
    return AgentBundle(
        index=bundle.index,
        algorithm=Algorithm.IL_TD3,
        scope=CriticScope.LOCAL,
        obs_dim=bundle.obs_dim,
        action_spec=bundle.action_spec,
        policy=bundle.policy.copy(),
        policy_target=bundle.policy_target.copy(),
        critics=critics,
        critic_targets=targets,
        policy_adam=bundle.policy_adam.copy(),
        critic_adams=adams,
        clock=UpdateClock(policy_delay=bundle.clock.policy_delay),
    )


# ---- acting ------------------------------------------------------------

def policy_head(spec: ActionSpec, raw: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Deterministic action from the raw policy output"""
    if spec.comm_dim == 0:
        return raw
    move = sigmoid_scaled(raw[..., :spec.move_dim], ACTION_LOW, ACTION_HIGH)[0]
    comm = softmax(raw[..., spec.move_dim:], temperature)
    return np.concatenate([move, comm], axis=-1)


def policy_head_backward(spec: ActionSpec, raw: np.ndarray, action: np.ndarray,
                         upstream: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Gradient w.r.t. the raw policy output given the gradient w.r.t. the action"""
    if spec.comm_dim == 0:
        return upstream
    m = spec.move_dim
    d_move = upstream[..., :m] * sigmoid_scaled(raw[..., :m], ACTION_LOW, ACTION_HIGH)[1]
    d_comm = softmax_backward(action[..., m:], upstream[..., m:], temperature)
    return np.concatenate([d_move, d_comm], axis=-1)


def deterministic_action(net: DenseNet, spec: ActionSpec, obs: np.ndarray,
                         temperature: float = 1.0) -> np.ndarray:
    raw, _ = forward(net, obs)
    return policy_head(spec, raw, temperature)


def select_actions(bundles: Sequence[AgentBundle], observations: Sequence[np.ndarray],
                   noise_scale: float, rng: SeededRng, temperature: float = 1.0) -> JointAction:
    """
    mu_i(o_i) plus Gaussian exploration noise of std noise_scale * action range,
    clamped to the action bounds; comm channels are Gumbel-Softmax samples.
    noise_scale 0 gives the exact deterministic policy output.
    """
    if len(observations) != len(bundles):
        raise DimensionMismatchError("observations", len(bundles), len(observations))
    movement, comm = [], []
    for bundle, obs in zip(bundles, observations):
        spec = bundle.action_spec
        obs = np.asarray(obs, dtype=np.float64)
        ValidationUtils.check_length(obs, bundle.obs_dim, f"observation of agent {bundle.index}")
        raw, _ = forward(bundle.policy, obs)
        action = policy_head(spec, raw, temperature)
        move = action[:spec.move_dim]
        if noise_scale > 0.0 and spec.move_dim:
            move = move + rng.normal(0.0, noise_scale * ACTION_RANGE, spec.move_dim)
        movement.append(np.clip(move, ACTION_LOW, ACTION_HIGH))
        if spec.comm_dim and noise_scale > 0.0:
            comm.append(gumbel_softmax(raw[spec.move_dim:], temperature, rng))
        else:
            comm.append(action[spec.move_dim:])
    return JointAction(movement, comm)


# ---- critic targets ----------------------------------------------------

def critic_inputs(bundle: AgentBundle, observations: Sequence[np.ndarray],
                  actions: Sequence[np.ndarray]) -> np.ndarray:
    """Batch of critic inputs for this bundle's scope"""
    if bundle.scope is CriticScope.LOCAL:
        i = bundle.index
        return np.concatenate([observations[i], actions[i]], axis=1)
    return np.concatenate(list(observations) + list(actions), axis=1)


def action_offset(bundle: AgentBundle, action_sizes: Sequence[int], obs_total: int) -> int:
    """Column where a_i starts inside the critic input"""
    if bundle.scope is CriticScope.LOCAL:
        return bundle.obs_dim
    return int(obs_total + sum(action_sizes[:bundle.index]))


def target_actions(bundles: Sequence[AgentBundle], next_observations: Sequence[np.ndarray],
                   sigma: float, clip: float, rng: Optional[SeededRng],
                   temperature: float = 1.0, agents: Optional[Sequence[int]] = None) -> List[Optional[np.ndarray]]:
    """
    mu'_j(o'_j) for the requested agents, movement perturbed by independent
    clipped Gaussian noise and clamped; comm slices stay deterministic.
    """
    wanted = range(len(bundles)) if agents is None else agents
    out: List[Optional[np.ndarray]] = [None] * len(bundles)
    for j in wanted:
        b = bundles[j]
        spec = b.action_spec
        raw, _ = forward(b.policy_target, next_observations[j])
        action = policy_head(spec, raw, temperature)
        if spec.move_dim and (sigma > 0.0 and clip > 0.0):
            noise = clipped_gaussian(sigma, clip, rng, size=(action.shape[0], spec.move_dim))
            action = action.copy()
            action[:, :spec.move_dim] = np.clip(action[:, :spec.move_dim] + noise, ACTION_LOW, ACTION_HIGH)
        out[j] = action
    return out


def bootstrap_mask(batch: Batch, hp: HyperParams) -> np.ndarray:
    """1 where the successor value is bootstrapped"""
    stop = batch.terminal if hp.bootstrap_on_timeout else (batch.terminal | batch.done)
    return 1.0 - stop.astype(np.float64)


def target_q_values(bundles: Sequence[AgentBundle], agent: int, batch: Batch, sigma: float,
                    clip: float, rng: Optional[SeededRng], temperature: float = 1.0) -> List[np.ndarray]:
    """Q'_{i,j}(x', a'_1..a'_N) for every target critic j of the agent, shape (B,) each"""
    bundle = bundles[agent]
    needed = [agent] if bundle.scope is CriticScope.LOCAL else None
    actions = target_actions(bundles, batch.next_observations, sigma, clip, rng, temperature, needed)
    inputs = critic_inputs(bundle, batch.next_observations, actions)
    return [forward(t, inputs)[0][:, 0] for t in bundle.critic_targets]


def matd3_critic_target(bundles: Sequence[AgentBundle], agent: int, batch: Batch,
                        hp: HyperParams, rng: SeededRng) -> np.ndarray:
    """y_i = r_i + gamma * min_j Q'_{i,j}(x', mu'(o') + eps) with clipped smoothing noise"""
    bundle = bundles[agent]
    if not bundle.twin:
        raise VariantMismatchError(f"agent {agent} ({bundle.algorithm.value}) has no twin critics")
    q1, q2 = target_q_values(bundles, agent, batch, hp.smoothing_sigma, hp.smoothing_clip,
                             rng, hp.gumbel_temperature)
    return batch.rewards[:, agent] + hp.gamma * bootstrap_mask(batch, hp) * np.minimum(q1, q2)


def maddpg_critic_target(bundles: Sequence[AgentBundle], agent: int, batch: Batch,
                         hp: HyperParams) -> np.ndarray:
    """y_i = r_i + gamma * Q'_i(x', mu'(o')) with a single target critic, no smoothing"""
    bundle = bundles[agent]
    if bundle.twin:
        raise VariantMismatchError(f"agent {agent} ({bundle.algorithm.value}) carries twin critics")
    (q,) = target_q_values(bundles, agent, batch, 0.0, 0.0, None, hp.gumbel_temperature)
    return batch.rewards[:, agent] + hp.gamma * bootstrap_mask(batch, hp) * q


def critic_target(bundles: Sequence[AgentBundle], agent: int, batch: Batch,
                  hp: HyperParams, rng: SeededRng) -> np.ndarray:
    if bundles[agent].twin:
        return matd3_critic_target(bundles, agent, batch, hp, rng)
    return maddpg_critic_target(bundles, agent, batch, hp)


# ---- updates -----------------------------------------------------------

def critic_loss_and_grads(critic: DenseNet, inputs: np.ndarray, y: np.ndarray) -> Tuple[float, ParamGrads]:
    """Mean squared residual and its gradient w.r.t. the critic parameters"""
    q, cache = forward(critic, inputs)
    residual = q[:, 0] - y
    if not np.all(np.isfinite(residual)):
        bad = int(np.flatnonzero(~np.isfinite(residual))[0])
        raise NonFiniteError("critic loss", {"batch_index": bad, "q": q[bad, 0], "y": y[bad]})
    n = residual.shape[0]
    loss = float(np.mean(residual * residual))
    grads, _ = backward(critic, cache, (2.0 / n) * residual[:, None])
    return loss, grads


def critic_update(bundle: AgentBundle, batch: Batch, y: np.ndarray, lr: float) -> List[float]:
    """One Adam step on every critic of the bundle against the same targets; returns pre-step losses"""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (batch.size,):
        raise DimensionMismatchError("critic targets", (batch.size,), y.shape)
    inputs = critic_inputs(bundle, batch.observations, batch.actions)
    losses = []
    for j, (critic, adam) in enumerate(zip(bundle.critics, bundle.critic_adams)):
        loss, grads = critic_loss_and_grads(critic, inputs, y)
        adam_step(critic, grads, adam, lr)
        losses.append(loss)
    bundle.clock.tick_critic()
    return losses


def policy_objective_and_grad(bundle: AgentBundle, batch: Batch,
                              temperature: float = 1.0) -> Tuple[float, ParamGrads]:
    """
    J = mean_b Q_{i,1}(x, a_-i, mu_i(o_i)) with other agents' actions from the batch,
    and dJ/d(policy parameters) through grad_a Q.
    """
    i = bundle.index
    spec = bundle.action_spec
    raw, policy_cache = forward(bundle.policy, batch.observations[i])
    action = policy_head(spec, raw, temperature)
    actions = list(batch.actions)
    actions[i] = action
    inputs = critic_inputs(bundle, batch.observations, actions)
    q, critic_cache = forward(bundle.critics[0], inputs)
    n = q.shape[0]
    objective = float(np.mean(q))
    _, input_grad = backward(bundle.critics[0], critic_cache, np.full_like(q, 1.0 / n))

    obs_total = int(sum(o.shape[1] for o in batch.observations))
    start = action_offset(bundle, [a.shape[1] for a in batch.actions], obs_total)
    d_action = input_grad[:, start:start + spec.size]
    d_raw = policy_head_backward(spec, raw, action, d_action, temperature)
    grads, _ = backward(bundle.policy, policy_cache, d_raw)
    return objective, grads


def policy_update(bundle: AgentBundle, batch: Batch, lr: float, temperature: float = 1.0) -> float:
    """Gradient ascent step on J for this agent's policy only; returns the gradient norm"""
    if not bundle.clock.permits_policy_update():
        raise ClockViolationError(
            f"agent {bundle.index}: policy update {bundle.clock.policy_updates + 1} not due after "
            f"{bundle.clock.critic_updates} critic updates with d={bundle.clock.policy_delay}"
        )
    _, grads = policy_objective_and_grad(bundle, batch, temperature)
    adam_step(bundle.policy, grads.scaled(-1.0), bundle.policy_adam, lr)
    bundle.clock.tick_policy()
    return grads.norm()


def update_targets(bundle: AgentBundle, tau: float):
    """Polyak step on the policy target and every critic target"""
    soft_update(bundle.policy_target, bundle.policy, tau)
    for target, critic in zip(bundle.critic_targets, bundle.critics):
        soft_update(target, critic, tau)
    bundle.clock.tick_target()


def agent_update(bundles: Sequence[AgentBundle], agent: int, batch: Batch,
                 hp: HyperParams, rng: SeededRng) -> Dict[str, Optional[float]]:
    """
    One learning step for one agent: critic step on its own target, then the
    delayed policy and target step when the clock says it is due.
    """
    bundle = bundles[agent]
    y = critic_target(bundles, agent, batch, hp, rng)
    losses = critic_update(bundle, batch, y, hp.lr)
    stats: Dict[str, Optional[float]] = {
        "critic_loss_1": losses[0],
        "critic_loss_2": losses[1] if len(losses) > 1 else None,
        "policy_grad_norm": None,
    }
    if bundle.clock.permits_policy_update():
        stats["policy_grad_norm"] = policy_update(bundle, batch, hp.lr, hp.gumbel_temperature)
        update_targets(bundle, hp.tau)
    return stats
