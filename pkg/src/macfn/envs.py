"""Sparse-reward particle scenarios with translation dynamics.

All functions accept states with an optional leading batch axis, so a
single :class:`EnvState` can hold many synchronous episodes (every episode
has the same fixed horizon).
"""

from dataclasses import dataclass
import math

import numpy as np

from . import kernels
from .errors import ConfigError, UsageError

SCENARIOS = ("robot_navigation", "food_collection", "predator_prey", "bimodal_toy")
_DEFAULT_HORIZON = {"robot_navigation": 12, "food_collection": 25, "predator_prey": 25, "bimodal_toy": 4}


@dataclass(frozen=True)
class EnvSpec:
    scenario: str = "food_collection"
    n_agents: int = 3
    horizon: int = 25
    arena_half_width: float = 3.0
    action_bound: float = 0.75
    pos_dim: int = 2
    # None means a fresh random layout every episode
    targets: tuple = None
    start: tuple = None
    n_obstacles: int = 0
    obstacle_radius: float = 0.5
    obs_radius: float = math.inf
    reward_floor: float = 1e-3
    # bimodal_toy only
    toy_center: float = 0.5
    toy_width: float = 0.2
    toy_height: float = 1.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}", "scenario")
        for name in ("n_agents", "horizon", "pos_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1", name)
        for name in ("arena_half_width", "action_bound", "reward_floor", "obs_radius"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0", name)
        if self.scenario == "bimodal_toy" and (self.n_agents != 2 or self.pos_dim != 1):
            raise ConfigError("bimodal_toy is defined for 2 agents in 1D", "scenario")

    @property
    def n_targets(self):
        if self.scenario == "predator_prey":
            return 1
        if self.scenario == "bimodal_toy":
            return 0
        return self.n_agents

    @property
    def obs_dim(self):
        d = self.pos_dim
        return d + (self.n_agents - 1) * d + self.n_targets * d + self.n_obstacles * d + 1

    @property
    def diameter(self):
        return 2.0 * self.arena_half_width * math.sqrt(self.pos_dim)


def make_spec(scenario, n_agents=None, **overrides):
    """Scenario defaults; keyword overrides win."""
    base = {"scenario": scenario, "horizon": _DEFAULT_HORIZON[scenario]}
    if scenario == "robot_navigation":
        base.update(n_agents=n_agents or 2)
        n = base["n_agents"]
        r = 0.6 * overrides.get("arena_half_width", 3.0)
        ang = [math.pi / 2 + 2 * math.pi * k / n for k in range(n)]
        base.update(start=(0.0, 0.0), targets=tuple((r * math.cos(a), r * math.sin(a)) for a in ang))
    elif scenario == "food_collection":
        base.update(n_agents=n_agents or 3)
    elif scenario == "predator_prey":
        base.update(n_agents=n_agents or 3, n_obstacles=2)
    else:
        base.update(n_agents=n_agents or 2, pos_dim=1, arena_half_width=1.0, action_bound=0.5)
    base.update(overrides)
    return EnvSpec(**base)


@dataclass
class EnvState:
    agents: np.ndarray  # (..., N, d)
    targets: np.ndarray  # (..., M, d)
    obstacles: np.ndarray  # (..., L, d)
    t: int = 0

    def copy(self):
        return EnvState(self.agents.copy(), self.targets.copy(), self.obstacles.copy(), self.t)


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def reset(spec, seed, batch=None):
    rng = _rng(seed)
    lead = () if batch is None else (int(batch),)
    A, d, N = spec.arena_half_width, spec.pos_dim, spec.n_agents
    if spec.start is not None:
        agents = np.broadcast_to(np.asarray(spec.start, dtype=np.float64), lead + (N, d)).copy()
    elif spec.scenario == "bimodal_toy":
        agents = np.zeros(lead + (N, d))
    else:
        agents = rng.uniform(-A, A, size=lead + (N, d))
    M = spec.n_targets
    if spec.targets is not None:
        targets = np.broadcast_to(np.asarray(spec.targets, dtype=np.float64).reshape(M, d), lead + (M, d)).copy()
    else:
        targets = rng.uniform(-A, A, size=lead + (M, d))
    L = spec.n_obstacles
    obstacles = rng.uniform(-0.5 * A, 0.5 * A, size=lead + (L, d))
    if L:
        agents = np.clip(kernels.push_out(agents, obstacles, spec.obstacle_radius), -A, A)
    return EnvState(agents, targets, obstacles, 0)


def move(spec, agents, actions, obstacles=None):
    """Translation followed by obstacle projection and arena clamping."""
    new = agents + actions
    if spec.n_obstacles and obstacles is not None:
        new = kernels.push_out(new, obstacles, spec.obstacle_radius)
    return np.clip(new, -spec.arena_half_width, spec.arena_half_width)


def step(spec, state, actions):
    if state.t >= spec.horizon:
        raise UsageError("cannot step a terminal state")
    actions = np.asarray(actions, dtype=np.float64)
    if actions.shape != state.agents.shape:
        raise UsageError(f"joint action shape {actions.shape} != {state.agents.shape}")
    if np.any(np.abs(actions) > spec.action_bound * (1 + 1e-12)):
        raise UsageError("action outside the action box")
    nxt = EnvState(move(spec, state.agents, actions, state.obstacles), state.targets, state.obstacles, state.t + 1)
    terminal = nxt.t == spec.horizon
    lead = state.agents.shape[:-2]
    if terminal:
        reward = terminal_reward(spec, nxt)
    else:
        reward = np.zeros(lead) if lead else 0.0
    return nxt, reward, terminal


def terminal_reward(spec, state):
    agents = state.agents
    if spec.scenario == "bimodal_toy":
        x = agents.reshape(agents.shape[:-2] + (-1,))
        c = spec.toy_center
        r = spec.reward_floor
        for m in (np.array([-c, 0.0]), np.array([c, 0.0])):
            r = r + spec.toy_height * np.exp(-((x - m) ** 2).sum(-1) / (2 * spec.toy_width ** 2))
        return r if np.ndim(r) else float(r)
    if spec.scenario == "predator_prey":
        diff = agents - state.targets[..., :1, :]
        r = spec.reward_floor + np.exp(-np.sqrt((diff * diff).sum(-1))).sum(-1)
        return r if np.ndim(r) else float(r)
    return kernels.coverage_reward(agents, state.targets, spec.reward_floor)


def observe_all(spec, state):
    """Observations for every agent: (..., N, obs_dim)."""
    ag = state.agents
    N, d = spec.n_agents, spec.pos_dim
    lead = ag.shape[:-2]
    parts = [ag]
    if N > 1:
        rel = ag[..., None, :, :] - ag[..., :, None, :]  # [i, j] = x_j - x_i
        keep = ~np.eye(N, dtype=bool)
        rel = rel[..., keep, :].reshape(lead + (N, (N - 1), d))
        parts.append(_mask(rel, spec.obs_radius).reshape(lead + (N, (N - 1) * d)))
    for ents in (state.targets, state.obstacles):
        if ents.shape[-2]:
            rel = ents[..., None, :, :] - ag[..., :, None, :]
            parts.append(_mask(rel, spec.obs_radius).reshape(lead + (N, -1)))
    parts.append(np.full(lead + (N, 1), state.t / spec.horizon))
    return np.concatenate(parts, axis=-1)


def observe(spec, state, agent_index):
    if not 0 <= agent_index < spec.n_agents:
        raise UsageError(f"agent index {agent_index} out of range")
    return observe_all(spec, state)[..., agent_index, :]


def _mask(rel, radius):
    if math.isinf(radius):
        return rel
    dist = np.sqrt((rel * rel).sum(-1, keepdims=True))
    return np.where(dist <= radius, rel, 0.0)


def obs_layout(spec):
    """Slices of the observation vector: own, others, entities, time."""
    d, N = spec.pos_dim, spec.n_agents
    own = slice(0, d)
    others = slice(d, d + (N - 1) * d)
    ent_end = others.stop + (spec.n_targets + spec.n_obstacles) * d
    entities = slice(others.stop, ent_end)
    time = slice(ent_end, ent_end + 1)
    return {"own": own, "others": others, "entities": entities, "time": time}
