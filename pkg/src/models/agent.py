"""
Agent bundle model - one learner's policy, critics, targets and optimizer state
"""

from dataclasses import dataclass, field
from typing import List, Optional

from .network import AdamState, DenseNet
from .types import Algorithm, CriticScope
from .world import ActionSpec


@dataclass
class UpdateClock:
    """
    Counts critic, policy and target updates.
    policy_updates == target_updates == critic_updates // policy_delay
    """
    policy_delay: int = 1
    critic_updates: int = 0
    policy_updates: int = 0
    target_updates: int = 0

    def __post_init__(self):
        if self.policy_delay < 1:
            raise ValueError(f"policy_delay must be >= 1, got {self.policy_delay}")

    def tick_critic(self):
        self.critic_updates += 1

    def permits_policy_update(self) -> bool:
        """True when one more policy update keeps the floor relation"""
        return self.policy_updates < self.critic_updates // self.policy_delay

    def tick_policy(self):
        self.policy_updates += 1

    def tick_target(self):
        self.target_updates += 1

    def consistent(self) -> bool:
        expected = self.critic_updates // self.policy_delay
        return self.policy_updates == expected and self.target_updates == expected


@dataclass
class AgentBundle:
    """
    Everything one agent learns.
    MADDPG carries one critic, MATD3 and IL-TD3 carry two. Critics read
    x + a_1..a_N (centralized) or o_i + a_i (local).
    """
    index: int
    algorithm: Algorithm
    scope: CriticScope
    obs_dim: int
    action_spec: ActionSpec
    policy: DenseNet
    policy_target: DenseNet
    critics: List[DenseNet]
    critic_targets: List[DenseNet]
    policy_adam: AdamState
    critic_adams: List[AdamState]
    clock: UpdateClock = field(default_factory=UpdateClock)

    def __post_init__(self):
        if len(self.critics) != len(self.critic_targets) or len(self.critics) != len(self.critic_adams):
            raise ValueError("critics, critic targets and critic optimizer states must pair up")
        expected = 2 if self.algorithm.twin_critics else 1
        if len(self.critics) != expected:
            raise ValueError(f"{self.algorithm.value} needs {expected} critic(s), got {len(self.critics)}")
        if not self.policy.same_topology(self.policy_target):
            raise ValueError("policy target topology differs from policy")
        for critic, target in zip(self.critics, self.critic_targets):
            if not critic.same_topology(target):
                raise ValueError("critic target topology differs from critic")

    @property
    def twin(self) -> bool:
        return len(self.critics) == 2

    @property
    def action_dim(self) -> int:
        return self.action_spec.size

    @property
    def critic_input_size(self) -> int:
        return self.critics[0].input_size

    def critic(self, j: int) -> Optional[DenseNet]:
        return self.critics[j] if j < len(self.critics) else None
