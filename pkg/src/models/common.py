"""
Common models for training, probing and aggregation
Transitions, minibatches, probe states and the summaries the harness writes
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from .world import World


@dataclass
class Transition:
    """
    One joint step (x, a_1..a_N, r_1..r_N, x').
    x is kept split per agent so policies can read o_i; `world` is the
    pre-step state, stored only when probing is enabled.
    """
    observations: List[np.ndarray]
    actions: List[np.ndarray]
    rewards: np.ndarray
    next_observations: List[np.ndarray]
    done: bool
    terminal: bool = False
    world: Optional[World] = None

    @property
    def x(self) -> np.ndarray:
        return np.concatenate(self.observations)

    @property
    def x_next(self) -> np.ndarray:
        return np.concatenate(self.next_observations)


@dataclass
class Batch:
    """Minibatch in column-per-agent layout; every array has B rows"""
    observations: List[np.ndarray]        # [(B, |o_i|)]
    actions: List[np.ndarray]             # [(B, |a_i|)]
    rewards: np.ndarray                   # (B, N)
    next_observations: List[np.ndarray]   # [(B, |o_i|)]
    done: np.ndarray                      # (B,) bool
    terminal: np.ndarray                  # (B,) bool
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    tags: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def size(self) -> int:
        return int(self.rewards.shape[0])

    @property
    def n_agents(self) -> int:
        return len(self.observations)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate(self.observations, axis=1)

    @property
    def x_next(self) -> np.ndarray:
        return np.concatenate(self.next_observations, axis=1)

    def with_actions(self, agent: int, actions: np.ndarray) -> "Batch":
        """Copy with one agent's action column replaced"""
        replaced = list(self.actions)
        replaced[agent] = np.asarray(actions, dtype=np.float64)
        return Batch(self.observations, replaced, self.rewards, self.next_observations,
                     self.done, self.terminal, self.indices, self.tags)


@dataclass
class ProbeState:
    """A stored state-action pair selected for the bias probe"""
    observations: List[np.ndarray]
    actions: List[np.ndarray]
    world: World
    tag: int

    @property
    def x(self) -> np.ndarray:
        return np.concatenate(self.observations)


@dataclass
class BiasReport:
    """Critic estimate against Monte-Carlo return for one agent at one evaluation"""
    eval_step: int
    agent: int
    mean_estimated_q: float
    mean_true_q: float
    sample_count: int
    ci95_half_width: Optional[float] = None   # only when aggregated over >= 2 runs
    mc_standard_error: float = 0.0

    def __post_init__(self):
        if self.sample_count <= 0:
            raise ValueError("a bias report needs at least one sample")

    @property
    def bias(self) -> float:
        return self.mean_estimated_q - self.mean_true_q


@dataclass
class MetricsRow:
    """One line of the metrics CSV"""
    episode: int
    step: int
    agent: int
    episodic_reward: float
    critic_loss_1: Optional[float]
    critic_loss_2: Optional[float]
    policy_grad_norm: Optional[float]
    critic_updates: int
    policy_updates: int
    target_updates: int


@dataclass
class EpisodeRecord:
    """Undiscounted return of every agent in one episode"""
    episode: int
    returns: np.ndarray

    @property
    def team_return(self) -> float:
        return float(np.mean(self.returns))


@dataclass
class SeedOutcome:
    """Result of training one seed"""
    seed: int
    ok: bool
    final_reward: Optional[float] = None
    curve: List[float] = field(default_factory=list)
    bias: List[BiasReport] = field(default_factory=list)
    wall_clock_s: float = 0.0
    output_dir: Optional[str] = None
    error: Optional[str] = None
    random_baseline: Optional[float] = None   # team mean return of uniform-random play
    eval_reward: Optional[float] = None       # team mean return of the noise-free trained policies


@dataclass
class RunSummary:
    """Per-seed outcomes of one experiment plus the cross-seed aggregate"""
    label: str
    config_hash: str
    outcomes: List[SeedOutcome]
    final_mean: Optional[float] = None
    final_ci95: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def failed_seeds(self) -> List[int]:
        return [o.seed for o in self.outcomes if not o.ok]

    @property
    def finals(self) -> List[float]:
        return [o.final_reward for o in self.outcomes if o.ok and o.final_reward is not None]


@dataclass
class GridEntry:
    """One configuration of a grid search"""
    rank: int
    overrides: Dict[str, Any]
    summary: RunSummary

    @property
    def mean_final(self) -> float:
        return self.summary.final_mean if self.summary.final_mean is not None else float("-inf")
