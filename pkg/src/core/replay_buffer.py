"""
Replay buffer - fixed-capacity ring of joint transitions
Numpy storage per agent column; every write gets a sequence tag so
windows of recent transitions can be located for the bias probe
"""

from typing import List, Optional, Sequence

import numpy as np

from src.models.common import Batch, Transition
from src.models.world import World
from src.utils.rng import SeededRng
from src.utils.validation import DimensionMismatchError, ValidationError, ValidationUtils


class ReplayBuffer:
    """
    Ring buffer D.
    Overwrites oldest first; sampling is uniform without replacement
    within a minibatch.
    """

    def __init__(self, capacity: int, obs_sizes: Sequence[int], action_sizes: Sequence[int],
                 store_worlds: bool = False):
        ValidationUtils.check_positive(capacity, "buffer capacity")
        if len(obs_sizes) != len(action_sizes):
            raise DimensionMismatchError("agents in buffer layout", len(obs_sizes), len(action_sizes))
        self.capacity = int(capacity)
        self.obs_sizes = [int(s) for s in obs_sizes]
        self.action_sizes = [int(s) for s in action_sizes]
        self.n_agents = len(self.obs_sizes)
        self.store_worlds = store_worlds

        self._obs = [np.zeros((self.capacity, s)) for s in self.obs_sizes]
        self._next_obs = [np.zeros((self.capacity, s)) for s in self.obs_sizes]
        self._actions = [np.zeros((self.capacity, s)) for s in self.action_sizes]
        self._rewards = np.zeros((self.capacity, self.n_agents))
        self._done = np.zeros(self.capacity, dtype=bool)
        self._terminal = np.zeros(self.capacity, dtype=bool)
        self._tags = np.full(self.capacity, -1, dtype=np.int64)
        self._worlds: List[Optional[World]] = [None] * self.capacity

        self.cursor = 0          # next slot to write
        self.count = 0
        self.total_written = 0   # tag of the next write

    def __len__(self) -> int:
        return self.count

    def push(self, transition: Transition) -> int:
        """Store a transition; returns its sequence tag"""
        if len(transition.observations) != self.n_agents or len(transition.actions) != self.n_agents:
            raise DimensionMismatchError("transition agents", self.n_agents, len(transition.observations))
        slot = self.cursor
        for i in range(self.n_agents):
            ValidationUtils.check_length(np.asarray(transition.observations[i]), self.obs_sizes[i], f"o_{i}")
            ValidationUtils.check_length(np.asarray(transition.actions[i]), self.action_sizes[i], f"a_{i}")
            self._obs[i][slot] = transition.observations[i]
            self._next_obs[i][slot] = transition.next_observations[i]
            self._actions[i][slot] = transition.actions[i]
        self._rewards[slot] = transition.rewards
        self._done[slot] = transition.done
        self._terminal[slot] = transition.terminal
        tag = self.total_written
        self._tags[slot] = tag
        if self.store_worlds:
            self._worlds[slot] = transition.world

        self.cursor = (self.cursor + 1) % self.capacity
        self.count = min(self.count + 1, self.capacity)
        self.total_written += 1
        return tag

    def _oldest_slot(self) -> int:
        return (self.cursor - self.count) % self.capacity

    def ordered_slots(self) -> np.ndarray:
        """Physical slots from oldest to newest"""
        return (self._oldest_slot() + np.arange(self.count)) % self.capacity

    def tags(self) -> np.ndarray:
        """Tags from oldest to newest"""
        return self._tags[self.ordered_slots()].copy()

    def slots_since(self, marker: int) -> np.ndarray:
        """Physical slots of surviving transitions with tag >= marker"""
        if marker > self.total_written:
            raise ValidationError(f"marker {marker} is ahead of the write position {self.total_written}")
        slots = self.ordered_slots()
        return slots[self._tags[slots] >= marker]

    def get(self, slot: int) -> Transition:
        ValidationUtils.check_index(int(slot), self.capacity, "buffer slot")
        if self._tags[slot] < 0:
            raise ValidationError(f"buffer slot {slot} is empty")
        return Transition(
            observations=[o[slot].copy() for o in self._obs],
            actions=[a[slot].copy() for a in self._actions],
            rewards=self._rewards[slot].copy(),
            next_observations=[o[slot].copy() for o in self._next_obs],
            done=bool(self._done[slot]),
            terminal=bool(self._terminal[slot]),
            world=self._worlds[slot],
        )

    def tag_of(self, slot: int) -> int:
        return int(self._tags[slot])

    def batch_from_slots(self, slots: np.ndarray) -> Batch:
        slots = np.asarray(slots, dtype=np.int64)
        return Batch(
            observations=[o[slots].copy() for o in self._obs],
            actions=[a[slots].copy() for a in self._actions],
            rewards=self._rewards[slots].copy(),
            next_observations=[o[slots].copy() for o in self._next_obs],
            done=self._done[slots].copy(),
            terminal=self._terminal[slots].copy(),
            indices=slots,
            tags=self._tags[slots].copy(),
        )

    def sample(self, batch_size: int, rng: SeededRng) -> Batch:
        """Uniform minibatch of distinct stored transitions"""
        if batch_size < 1:
            raise ValidationError(f"batch size must be positive, got {batch_size}")
        if batch_size > self.count:
            raise ValidationError(f"cannot sample {batch_size} distinct transitions from {self.count}")
        picks = rng.choice(self.count, size=batch_size, replace=False)
        slots = (self._oldest_slot() + np.asarray(picks, dtype=np.int64)) % self.capacity
        return self.batch_from_slots(slots)
