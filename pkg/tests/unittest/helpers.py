"""
Shared fixtures for the unit tests
Finite differences, hand-built networks and a small tabular Markov game
"""

import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from config.settings import HyperParams
from src.core.tensor_nn import init_dense_net
from src.models.network import DenseNet
from src.models.world import ActionSpec, JointAction, StepResult
from src.utils.rng import SeededRng


def tiny_hyperparams(**overrides) -> HyperParams:
    """Small, fast hyperparameters for loop tests"""
    base = dict(
        gamma=0.95, tau=0.05, policy_delay=2, lr=0.01, batch_size=8,
        buffer_capacity=2000, exploration_noise=0.1, episodes=4,
        steps_per_episode=10, hidden_sizes=[8], warmup=16,
    )
    base.update(overrides)
    return HyperParams(**base)


def constant_net(layer_sizes, value: float) -> DenseNet:
    """Network whose output is `value` for every input"""
    net = init_dense_net(layer_sizes, None, zero=True)
    net.biases[-1][:] = value
    return net


def finite_difference(f: Callable[[], float], params: List[np.ndarray], h: float = 1e-5) -> List[np.ndarray]:
    """Central differences of f with respect to every entry of every array (perturbed in place)"""
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = f()
            flat[k] = orig - h
            down = f()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def relative_error(analytic: List[np.ndarray], numeric: List[np.ndarray], floor: float = 1e-3) -> float:
    """Largest absolute deviation relative to the gradient scale (floored)"""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(float(np.max(np.abs(a))), float(np.max(np.abs(n))), floor)
        worst = max(worst, float(np.max(np.abs(a - n))) / scale)
    return worst


# ---- tabular toy game ----------------------------------------------------

@dataclass
class TabularState:
    s: int
    t: int = 0
    horizon: int = 10

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    def copy(self) -> "TabularState":
        return replace(self)


class TabularGame:
    """
    Single-agent, 2-state, 2-action Markov game.
    Observation: one-hot state. Action: movement[0] < 0 selects action 0,
    otherwise action 1.
    """
    n_agents = 1
    obs_sizes = [2]
    action_specs = [ActionSpec(move_dim=1, comm_dim=0)]
    adversary_mask = [False]

    def __init__(self, rewards, transitions, deterministic: bool = False, horizon: int = 10):
        self.rewards = np.asarray(rewards, dtype=np.float64)          # (s, a)
        self.transitions = np.asarray(transitions, dtype=np.float64)  # (s, a) -> P(s' = 1)
        self.deterministic = deterministic
        self.horizon = horizon

    @staticmethod
    def action_index(movement: np.ndarray) -> int:
        return 0 if float(movement[0]) < 0.0 else 1

    def observe_all(self, world: TabularState) -> List[np.ndarray]:
        obs = np.zeros(2)
        obs[world.s] = 1.0
        return [obs]

    def reset(self, rng: SeededRng):
        world = TabularState(s=int(rng.integers(0, 2)), t=0, horizon=self.horizon)
        return world, self.observe_all(world)

    def step(self, world: TabularState, joint_action, rng: Optional[SeededRng] = None) -> StepResult:
        if not isinstance(joint_action, JointAction):
            joint_action = JointAction.from_vectors(joint_action, self.action_specs)
        a = self.action_index(joint_action.movement[0])
        p_one = self.transitions[world.s, a]
        if rng is None:
            s_next = 1 if p_one >= 0.5 else 0
        else:
            s_next = 1 if rng.uniform() < p_one else 0
        nxt = TabularState(s=s_next, t=world.t + 1, horizon=world.horizon)
        return StepResult(observations=self.observe_all(nxt), rewards=np.array([self.rewards[world.s, a]]),
                          done=nxt.done, world=nxt)

    def restore(self, snapshot, horizon: Optional[int] = None):
        world = snapshot.copy()
        if horizon is not None:
            world.t = 0
            world.horizon = horizon
        return world

    def truncated_q(self, policy: List[int], gamma: float, steps: int) -> np.ndarray:
        """Exact steps-horizon action values under a deterministic policy (dynamic programming)"""
        v = np.zeros(2)
        q = np.zeros((2, 2))
        for _ in range(steps):
            p_next = np.stack([1.0 - self.transitions, self.transitions], axis=-1)  # (s, a, s')
            q = self.rewards + gamma * p_next @ v
            v = np.array([q[s, policy[s]] for s in range(2)])
        return q
