"""
Particle scenarios - placement, observation layouts and rewards
Scenarios are looked up by string id; keep_away and covert_communication are
registered as plug-in slots without a built-in implementation
"""

from typing import Callable, Dict, List, Optional

import numpy as np

from src.models.world import ActionSpec, Entity, World, MOVE_DIM
from src.utils.logger import ComponentLogger
from src.utils.rng import SeededRng
from src.utils.validation import (
    ScenarioNotFoundError, ScenarioNotImplementedError, ValidationError,
)

logger = ComponentLogger("ParticleEnv")

AGENT_RADIUS = 0.1
PREY_RADIUS = 0.075
LANDMARK_RADIUS = 0.05
ARENA = 1.0
MAX_PLACEMENT_ATTEMPTS = 10000

COLLISION_PENALTY = 1.0
CONTACT_BONUS = 10.0
PREY_BOUNDARY_PENALTY = 10.0

_REGISTRY: Dict[str, Optional[Callable[..., "Scenario"]]] = {}


def register_scenario(scenario_id: str, factory: Optional[Callable[..., "Scenario"]] = None):
    """
    Register a scenario factory under an id.
    Usable as a decorator; registering without a factory reserves a plug-in slot.
    """
    if factory is not None:
        _REGISTRY[scenario_id] = factory
        logger.debug(f"Registered scenario factory '{scenario_id}'")
        return factory

    def decorator(cls):
        cls.scenario_id = scenario_id
        _REGISTRY[scenario_id] = cls
        return cls

    _REGISTRY.setdefault(scenario_id, None)
    return decorator


def registered_scenarios() -> List[str]:
    return sorted(_REGISTRY.keys())


def make_scenario(scenario_id: str, num_agents: Optional[int] = None) -> "Scenario":
    """Instantiate a registered scenario"""
    if scenario_id not in _REGISTRY:
        raise ScenarioNotFoundError(scenario_id, _REGISTRY.keys())
    factory = _REGISTRY[scenario_id]
    if factory is None:
        raise ScenarioNotImplementedError(
            f"scenario '{scenario_id}' is a registered plug-in slot without an implementation; "
            f"register a factory with register_scenario('{scenario_id}', factory)"
        )
    return factory(num_agents=num_agents)


def _offset(target: Entity, origin: Entity) -> np.ndarray:
    return target.position - origin.position


def _distance(a: Entity, b: Entity) -> float:
    return float(np.linalg.norm(a.position - b.position))


def _touching(a: Entity, b: Entity) -> bool:
    return _distance(a, b) < a.radius + b.radius


class Scenario:
    """
    Base scenario.
    Subclasses build the entity roster, observation vectors and rewards.
    """
    scenario_id: str = ""
    adversarial: bool = False

    def __init__(self, num_agents: Optional[int] = None):
        if num_agents is not None:
            raise ValidationError(f"scenario '{self.scenario_id}' has a fixed agent count")

    # ---- roster -------------------------------------------------------
    def build_entities(self):
        """(agents, landmarks) with radii and flags set, positions unset"""
        raise NotImplementedError

    def action_specs(self) -> List[ActionSpec]:
        raise NotImplementedError

    def adversary_mask(self) -> List[bool]:
        agents, _ = self.build_entities()
        return [a.adversary for a in agents]

    def pick_target(self, world: World, rng: SeededRng) -> Optional[int]:
        return None

    def make_world(self, rng: SeededRng, horizon: int) -> World:
        """Sample a fresh world: uniform placement with rejection of overlaps"""
        agents, landmarks = self.build_entities()
        placed: List[Entity] = []
        for entity in agents + landmarks:
            for _ in range(MAX_PLACEMENT_ATTEMPTS):
                candidate = rng.uniform(-ARENA, ARENA, size=2)
                if all(np.linalg.norm(candidate - other.position) >= entity.radius + other.radius
                       for other in placed):
                    entity.position = candidate
                    break
            else:
                raise ValidationError(f"could not place entities without overlap in '{self.scenario_id}'")
            entity.velocity = np.zeros(2)
            placed.append(entity)
        for agent, spec in zip(agents, self.action_specs()):
            agent.comm = np.zeros(spec.comm_dim)
        world = World(agents=agents, landmarks=landmarks, scenario_id=self.scenario_id,
                      horizon=horizon, t=0)
        world.target_index = self.pick_target(world, rng)
        return world

    # ---- observations and rewards -------------------------------------
    def observation(self, world: World, index: int) -> np.ndarray:
        raise NotImplementedError

    def observation_sizes(self) -> List[int]:
        raise NotImplementedError

    def rewards(self, world: World) -> np.ndarray:
        raise NotImplementedError


@register_scenario("cooperative_navigation")
class CooperativeNavigation(Scenario):
    """
    N agents cover N landmarks.
    Observation: own velocity (2), own position (2), landmark offsets (2N),
    other-agent offsets (2(N-1)). N=3 gives 14.
    Shared reward: -sum over landmarks of the closest agent distance,
    minus 1 per colliding agent pair.
    """

    def __init__(self, num_agents: Optional[int] = None):
        self.n = 3 if num_agents is None else int(num_agents)
        if self.n < 1:
            raise ValidationError("cooperative_navigation needs at least one agent")

    def build_entities(self):
        agents = [Entity(position=np.zeros(2), radius=AGENT_RADIUS) for _ in range(self.n)]
        landmarks = [Entity(position=np.zeros(2), radius=LANDMARK_RADIUS, movable=False, collide=False)
                     for _ in range(self.n)]
        return agents, landmarks

    def action_specs(self):
        return [ActionSpec(MOVE_DIM, 0) for _ in range(self.n)]

    def observation_sizes(self):
        return [2 + 2 + 2 * self.n + 2 * (self.n - 1)] * self.n

    def observation(self, world, index):
        me = world.agents[index]
        parts = [me.velocity, me.position]
        parts += [_offset(l, me) for l in world.landmarks]
        parts += [_offset(a, me) for j, a in enumerate(world.agents) if j != index]
        return np.concatenate(parts)

    def collisions(self, world) -> int:
        count = 0
        for i in range(len(world.agents)):
            for j in range(i + 1, len(world.agents)):
                if _touching(world.agents[i], world.agents[j]):
                    count += 1
        return count

    def coverage_cost(self, world) -> float:
        return float(sum(min(_distance(a, l) for a in world.agents) for l in world.landmarks))

    def rewards(self, world):
        shared = -self.coverage_cost(world) - COLLISION_PENALTY * self.collisions(world)
        return np.full(len(world.agents), shared)


@register_scenario("cooperative_communication")
class CooperativeCommunication(Scenario):
    """
    A static speaker sees the goal colour and talks over a 3-way channel;
    a mute listener sees landmarks and the message and has to reach the goal.
    Speaker observation: goal colour one-hot (3).
    Listener observation: own velocity (2), landmark offsets (6), received comm (3).
    Shared reward: -dist(listener, goal).
    """
    N_COLORS = 3

    def build_entities(self):
        speaker = Entity(position=np.zeros(2), radius=AGENT_RADIUS, movable=False, collide=False)
        listener = Entity(position=np.zeros(2), radius=AGENT_RADIUS)
        landmarks = [Entity(position=np.zeros(2), radius=LANDMARK_RADIUS, movable=False,
                            collide=False, color_tag=k) for k in range(self.N_COLORS)]
        return [speaker, listener], landmarks

    def action_specs(self):
        return [ActionSpec(0, self.N_COLORS), ActionSpec(MOVE_DIM, 0)]

    def pick_target(self, world, rng):
        return int(rng.integers(0, len(world.landmarks)))

    def observation_sizes(self):
        return [self.N_COLORS, 2 + 2 * self.N_COLORS + self.N_COLORS]

    def observation(self, world, index):
        if index == 0:
            goal = np.zeros(self.N_COLORS)
            goal[world.landmarks[world.target_index].color_tag] = 1.0
            return goal
        listener, speaker = world.agents[1], world.agents[0]
        parts = [listener.velocity]
        parts += [_offset(l, listener) for l in world.landmarks]
        parts.append(speaker.comm if speaker.comm.size else np.zeros(self.N_COLORS))
        return np.concatenate(parts)

    def rewards(self, world):
        shared = -_distance(world.agents[1], world.landmarks[world.target_index])
        return np.full(2, shared)


@register_scenario("predator_prey")
class PredatorPrey(Scenario):
    """
    Three slower predators chase one faster prey around two obstacles.
    Observation: own velocity (2), own position (2), obstacle offsets (4),
    other-agent offsets (6), plus prey velocity (2) for predators.
    Each predator-prey contact gives every predator +10 and the prey -10;
    the prey also pays for leaving the arena.
    """
    adversarial = True
    N_PREDATORS = 3
    N_OBSTACLES = 2

    def build_entities(self):
        predators = [Entity(position=np.zeros(2), radius=AGENT_RADIUS, max_speed=1.0, adversary=True)
                     for _ in range(self.N_PREDATORS)]
        prey = Entity(position=np.zeros(2), radius=PREY_RADIUS, max_speed=1.3)
        obstacles = [Entity(position=np.zeros(2), radius=LANDMARK_RADIUS, movable=False)
                     for _ in range(self.N_OBSTACLES)]
        return predators + [prey], obstacles

    def action_specs(self):
        return [ActionSpec(MOVE_DIM, 0) for _ in range(self.N_PREDATORS + 1)]

    def observation_sizes(self):
        base = 2 + 2 + 2 * self.N_OBSTACLES + 2 * self.N_PREDATORS
        return [base + 2] * self.N_PREDATORS + [base]

    def observation(self, world, index):
        me = world.agents[index]
        parts = [me.velocity, me.position]
        parts += [_offset(l, me) for l in world.landmarks]
        parts += [_offset(a, me) for j, a in enumerate(world.agents) if j != index]
        if me.adversary:
            parts += [a.velocity for a in world.agents if not a.adversary]
        return np.concatenate(parts)

    def contact_events(self, world) -> int:
        prey = [a for a in world.agents if not a.adversary]
        return sum(1 for p in world.agents if p.adversary for q in prey if _touching(p, q))

    def contact_terms(self, world) -> np.ndarray:
        """Competitive part of the reward; prey term is minus the predator term"""
        events = self.contact_events(world)
        return np.array([CONTACT_BONUS * events if a.adversary else -CONTACT_BONUS * events
                         for a in world.agents])

    def rewards(self, world):
        rewards = self.contact_terms(world)
        for i, agent in enumerate(world.agents):
            if not agent.adversary:
                excursion = np.maximum(np.abs(agent.position) - ARENA, 0.0)
                rewards[i] -= PREY_BOUNDARY_PENALTY * float(np.sum(excursion))
        return rewards


@register_scenario("physical_deception")
class PhysicalDeception(Scenario):
    """
    Two cooperators know which of two landmarks is the target; one adversary
    does not and tries to reach it anyway.
    Adversary observation: own velocity (2), own position (2), landmark
    offsets (4), other-agent offsets (4) = 12.
    Cooperator observation: as above plus target offset (2) = 14.
    Cooperators: -min_i dist(coop_i, target) + dist(adv, target);
    adversary: -dist(adv, target).
    """
    adversarial = True
    N_LANDMARKS = 2

    def build_entities(self):
        adversary = Entity(position=np.zeros(2), radius=AGENT_RADIUS, adversary=True)
        cooperators = [Entity(position=np.zeros(2), radius=AGENT_RADIUS) for _ in range(2)]
        landmarks = [Entity(position=np.zeros(2), radius=LANDMARK_RADIUS, movable=False,
                            collide=False, color_tag=k) for k in range(self.N_LANDMARKS)]
        return [adversary] + cooperators, landmarks

    def action_specs(self):
        return [ActionSpec(MOVE_DIM, 0) for _ in range(3)]

    def pick_target(self, world, rng):
        return int(rng.integers(0, len(world.landmarks)))

    def observation_sizes(self):
        return [12, 14, 14]

    def observation(self, world, index):
        me = world.agents[index]
        parts = [me.velocity, me.position]
        if not me.adversary:
            parts.append(_offset(world.landmarks[world.target_index], me))
        parts += [_offset(l, me) for l in world.landmarks]
        parts += [_offset(a, me) for j, a in enumerate(world.agents) if j != index]
        return np.concatenate(parts)

    def rewards(self, world):
        target = world.landmarks[world.target_index]
        adversaries = [a for a in world.agents if a.adversary]
        cooperators = [a for a in world.agents if not a.adversary]
        adv_dist = min(_distance(a, target) for a in adversaries)
        coop_reward = -min(_distance(c, target) for c in cooperators) + adv_dist
        return np.array([-adv_dist if a.adversary else coop_reward for a in world.agents])


# plug-in slots; reward/observation definitions come from outside this package
register_scenario("keep_away")
register_scenario("covert_communication")
