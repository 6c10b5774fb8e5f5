"""
Particle world model - entities, world state, joint actions and step results
A World is a value: stepping produces a new World and never mutates the old one
"""

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from src.utils.validation import DimensionMismatchError, ValidationError, ValidationUtils

MOVE_DIM = 2
ACTION_LOW = -1.0
ACTION_HIGH = 1.0


@dataclass
class Entity:
    """Agent or landmark in the 2-D arena"""
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.1
    movable: bool = True
    collide: bool = True
    max_speed: Optional[float] = None
    mass: float = 1.0
    color_tag: int = 0
    adversary: bool = False
    comm: np.ndarray = field(default_factory=lambda: np.zeros(0))  # last emitted comm vector

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(2)
        self.velocity = np.asarray(self.velocity, dtype=np.float64).reshape(2)
        self.comm = np.asarray(self.comm, dtype=np.float64)
        if not self.radius > 0:
            raise ValidationError(f"entity radius must be positive, got {self.radius}")

    def copy(self) -> "Entity":
        return replace(self, position=self.position.copy(), velocity=self.velocity.copy(),
                       comm=self.comm.copy())


@dataclass
class World:
    """Full simulator state; agent order is fixed for an episode"""
    agents: List[Entity]
    landmarks: List[Entity]
    scenario_id: str
    horizon: int
    t: int = 0
    target_index: Optional[int] = None   # goal landmark (communication, deception)

    @property
    def done(self) -> bool:
        return self.t >= self.horizon

    @property
    def entities(self) -> List[Entity]:
        return self.agents + self.landmarks

    def copy(self) -> "World":
        return World(
            agents=[a.copy() for a in self.agents],
            landmarks=[l.copy() for l in self.landmarks],
            scenario_id=self.scenario_id,
            horizon=self.horizon,
            t=self.t,
            target_index=self.target_index,
        )

    def translated(self, offset: Sequence[float]) -> "World":
        """Copy with every entity shifted by offset"""
        shifted = self.copy()
        for entity in shifted.entities:
            entity.position = entity.position + np.asarray(offset, dtype=np.float64)
        return shifted

    def bit_equal(self, other: "World") -> bool:
        if (self.t, self.horizon, self.scenario_id, self.target_index) != \
                (other.t, other.horizon, other.scenario_id, other.target_index):
            return False
        mine, theirs = self.entities, other.entities
        if len(mine) != len(theirs):
            return False
        for a, b in zip(mine, theirs):
            if a.position.tobytes() != b.position.tobytes() or a.velocity.tobytes() != b.velocity.tobytes():
                return False
            if a.comm.tobytes() != b.comm.tobytes():
                return False
        return True


@dataclass(frozen=True)
class ActionSpec:
    """Per-agent action layout: movement force (0 or 2 dims) then comm channel"""
    move_dim: int = MOVE_DIM
    comm_dim: int = 0

    @property
    def size(self) -> int:
        return self.move_dim + self.comm_dim


@dataclass
class JointAction:
    """Per-agent movement forces and relaxed one-hot comm vectors"""
    movement: List[np.ndarray]
    comm: List[np.ndarray]

    def __post_init__(self):
        if len(self.movement) != len(self.comm):
            raise DimensionMismatchError("joint action agents", len(self.movement), len(self.comm))
        self.movement = [np.clip(np.asarray(m, dtype=np.float64), ACTION_LOW, ACTION_HIGH) for m in self.movement]
        self.comm = [np.asarray(c, dtype=np.float64) for c in self.comm]
        for i, c in enumerate(self.comm):
            if c.size and not ValidationUtils.on_simplex(c, tol=1e-6):
                raise ValidationError(f"comm vector of agent {i} is not on the probability simplex: {c}")

    @property
    def n_agents(self) -> int:
        return len(self.movement)

    @staticmethod
    def from_vectors(vectors: Sequence[np.ndarray], specs: Sequence[ActionSpec]) -> "JointAction":
        """Split flat per-agent action vectors into movement and comm parts"""
        if len(vectors) != len(specs):
            raise DimensionMismatchError("joint action agents", len(specs), len(vectors))
        movement, comm = [], []
        for i, (vec, spec) in enumerate(zip(vectors, specs)):
            vec = np.asarray(vec, dtype=np.float64)
            ValidationUtils.check_length(vec, spec.size, f"action of agent {i}")
            movement.append(vec[:spec.move_dim])
            comm.append(vec[spec.move_dim:])
        return JointAction(movement, comm)

    def vectors(self) -> List[np.ndarray]:
        """Flat per-agent action vectors (movement then comm)"""
        return [np.concatenate([m, c]) for m, c in zip(self.movement, self.comm)]


@dataclass
class StepResult:
    """Outcome of one environment step; `world` is the successor state"""
    observations: List[np.ndarray]
    rewards: np.ndarray
    done: bool
    world: Optional[World] = None
    terminal: bool = False
