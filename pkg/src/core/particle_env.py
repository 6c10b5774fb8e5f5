"""
Particle environment - deterministic 2-D multi-agent world
Physics integration, observation and reward dispatch to the registered scenarios
"""

from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from src.core.scenarios import Scenario, make_scenario
from src.models.world import ActionSpec, JointAction, StepResult, World
from src.utils.logger import ComponentLogger
from src.utils.rng import SeededRng
from src.utils.validation import (
    DimensionMismatchError, EpisodeDoneError, SnapshotRestoreError, ValidationUtils,
)

logger = ComponentLogger("ParticleEnv")

DEFAULT_HORIZON = 25
PROBE_HORIZON = 200


@dataclass(frozen=True)
class PhysicsParams:
    """Integration constants shared by every scenario"""
    dt: float = 0.1
    damping: float = 0.75           # multiplicative velocity retention per step
    force_scale: float = 5.0        # movement action -> force, per unit mass
    contact_stiffness: float = 100.0
    boundary_stiffness: float = 50.0
    arena: float = 1.0

    def terminal_speed(self, action_norm: float = np.sqrt(2.0)) -> float:
        """Fixed-point speed under a constant action of the given norm"""
        return self.force_scale * self.dt * action_norm / (1.0 - self.damping)


PHYSICS = PhysicsParams()


class MarkovGame(Protocol):
    """What the learners and the bias probe need from an environment"""
    n_agents: int
    obs_sizes: List[int]
    action_specs: List[ActionSpec]
    adversary_mask: List[bool]
    deterministic: bool

    def reset(self, rng: SeededRng) -> Tuple[World, List[np.ndarray]]: ...

    def step(self, world, joint_action, rng: Optional[SeededRng] = None) -> StepResult: ...

    def observe_all(self, world) -> List[np.ndarray]: ...

    def restore(self, snapshot, horizon: int): ...


def integrate_velocity(velocity: np.ndarray, force: np.ndarray, mass: float,
                       params: PhysicsParams = PHYSICS) -> np.ndarray:
    """v <- damping * v + (force / mass) * dt"""
    return params.damping * velocity + (force / mass) * params.dt


def contact_forces(world: World, params: PhysicsParams = PHYSICS) -> List[np.ndarray]:
    """Penalty forces k * penetration along the centre line, one per entity"""
    entities = world.entities
    forces = [np.zeros(2) for _ in entities]
    for i in range(len(entities)):
        a = entities[i]
        if not a.collide:
            continue
        for j in range(i + 1, len(entities)):
            b = entities[j]
            if not b.collide or not (a.movable or b.movable):
                continue
            delta = a.position - b.position
            dist = float(np.linalg.norm(delta))
            penetration = a.radius + b.radius - dist
            if penetration <= 0.0 or dist == 0.0:
                continue
            f = params.contact_stiffness * penetration * delta / dist
            if a.movable:
                forces[i] += f
            if b.movable:
                forces[j] -= f
    return forces


def boundary_force(position: np.ndarray, params: PhysicsParams = PHYSICS) -> np.ndarray:
    """Soft wall: pulls back proportionally to the excursion beyond the arena"""
    excursion = position - np.clip(position, -params.arena, params.arena)
    return -params.boundary_stiffness * excursion


def advance(world: World, joint_action: JointAction, params: PhysicsParams = PHYSICS) -> World:
    """One physics tick on a copy of the world; t and comm are updated too"""
    nxt = world.copy()
    contacts = contact_forces(world, params)
    for i, agent in enumerate(nxt.agents):
        agent.comm = joint_action.comm[i].copy()
        if not agent.movable:
            continue
        force = contacts[i] + boundary_force(agent.position, params)
        move = joint_action.movement[i]
        if move.size:
            force = force + params.force_scale * move
        agent.velocity = integrate_velocity(agent.velocity, force, agent.mass, params)
        if agent.max_speed is not None:
            speed = float(np.linalg.norm(agent.velocity))
            if speed > agent.max_speed:
                agent.velocity = agent.velocity * (agent.max_speed / speed)
        agent.position = agent.position + agent.velocity * params.dt
    nxt.t = world.t + 1
    return nxt


class ParticleEnv:
    """
    Particle world bound to one scenario.
    All methods are pure: worlds go in, new worlds come out.
    """
    deterministic = True

    def __init__(self, scenario_id: str, horizon: int = DEFAULT_HORIZON,
                 num_agents: Optional[int] = None, physics: PhysicsParams = PHYSICS):
        ValidationUtils.check_positive(horizon, "horizon")
        self.scenario: Scenario = make_scenario(scenario_id, num_agents=num_agents)
        self.scenario_id = scenario_id
        self.horizon = int(horizon)
        self.physics = physics
        self.action_specs: List[ActionSpec] = self.scenario.action_specs()
        self.obs_sizes: List[int] = self.scenario.observation_sizes()
        self.adversary_mask: List[bool] = self.scenario.adversary_mask()
        self.n_landmarks = len(self.scenario.build_entities()[1])
        self.n_agents = len(self.action_specs)
        logger.debug(f"Scenario '{scenario_id}': {self.n_agents} agents, {self.n_landmarks} landmarks, "
                     f"obs sizes {self.obs_sizes}")

    @property
    def state_size(self) -> int:
        return int(sum(self.obs_sizes))

    def reset(self, rng: SeededRng) -> Tuple[World, List[np.ndarray]]:
        """Fresh world with zero velocities at t=0"""
        world = self.scenario.make_world(rng, self.horizon)
        return world, self.observe_all(world)

    def _coerce_action(self, joint_action: Union[JointAction, Sequence[np.ndarray]]) -> JointAction:
        if not isinstance(joint_action, JointAction):
            return JointAction.from_vectors(joint_action, self.action_specs)
        if joint_action.n_agents != self.n_agents:
            raise DimensionMismatchError("joint action agents", self.n_agents, joint_action.n_agents)
        for i, spec in enumerate(self.action_specs):
            ValidationUtils.check_length(joint_action.movement[i], spec.move_dim, f"movement of agent {i}")
            if joint_action.comm[i].size != spec.comm_dim:
                raise DimensionMismatchError(f"comm of agent {i}", spec.comm_dim, joint_action.comm[i].size)
        return joint_action

    def step(self, world: World, joint_action: Union[JointAction, Sequence[np.ndarray]],
             rng: Optional[SeededRng] = None) -> StepResult:
        """Advance one tick; rewards are evaluated on the successor state (rng unused)"""
        if world.done:
            raise EpisodeDoneError(f"world reached its horizon ({world.t}/{world.horizon}); call reset")
        action = self._coerce_action(joint_action)
        nxt = advance(world, action, self.physics)
        return StepResult(
            observations=self.observe_all(nxt),
            rewards=self.reward(nxt),
            done=nxt.done,
            world=nxt,
            terminal=False,
        )

    def observe(self, world: World, agent_index: int) -> np.ndarray:
        ValidationUtils.check_index(agent_index, self.n_agents, "agent index")
        return self.scenario.observation(world, agent_index)

    def observe_all(self, world: World) -> List[np.ndarray]:
        return [self.scenario.observation(world, i) for i in range(self.n_agents)]

    def reward(self, world: World) -> np.ndarray:
        return self.scenario.rewards(world)

    def restore(self, snapshot, horizon: Optional[int] = None) -> World:
        """World copy to roll out from; t restarts at 0 when a horizon is given"""
        if not isinstance(snapshot, World):
            raise SnapshotRestoreError(f"snapshot is {type(snapshot).__name__}, not a World")
        if snapshot.scenario_id != self.scenario_id or len(snapshot.agents) != self.n_agents:
            raise SnapshotRestoreError(
                f"snapshot of '{snapshot.scenario_id}' with {len(snapshot.agents)} agents "
                f"cannot be restored into '{self.scenario_id}' with {self.n_agents} agents"
            )
        world = snapshot.copy()
        if horizon is not None:
            world.t = 0
            world.horizon = int(horizon)
        return world


_ENV_CACHE = {}


def _env_for(scenario_id: str, n_agents: Optional[int] = None) -> ParticleEnv:
    key = (scenario_id, n_agents)
    if key not in _ENV_CACHE:
        num = n_agents if scenario_id == "cooperative_navigation" else None
        _ENV_CACHE[key] = ParticleEnv(scenario_id, num_agents=num)
    return _ENV_CACHE[key]


def reset(scenario_id: str, rng: SeededRng, horizon: int = DEFAULT_HORIZON,
          num_agents: Optional[int] = None) -> Tuple[World, List[np.ndarray]]:
    """Module-level reset for callers that do not hold a ParticleEnv"""
    return ParticleEnv(scenario_id, horizon=horizon, num_agents=num_agents).reset(rng)


def step(world: World, joint_action) -> StepResult:
    return _env_for(world.scenario_id, len(world.agents)).step(world, joint_action)


def observe(world: World, agent_index: int) -> np.ndarray:
    return _env_for(world.scenario_id, len(world.agents)).observe(world, agent_index)


def reward(world: World, scenario: Optional[Scenario] = None) -> np.ndarray:
    if scenario is None:
        scenario = _env_for(world.scenario_id, len(world.agents)).scenario
    return scenario.rewards(world)
