"""Candidate sampling, flow-proportional action selection and rollouts."""

from dataclasses import dataclass

import numpy as np

from . import envs, kernels
from .errors import UsageError

MODES = ("sample", "greedy", "random")


def sample_candidates(spec, k_hat, rng, lead=()):
    """K̂ i.i.d. uniform actions per agent: (*lead, N, K̂, d)."""
    if k_hat < 2:
        raise UsageError("K̂ must be at least 2")
    b = spec.action_bound
    return rng.uniform(-b, b, size=tuple(lead) + (spec.n_agents, int(k_hat), spec.pos_dim))


def softmax(logits, temperature=1.0, axis=-1):
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=axis, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=axis, keepdims=True)


def choose(logits, mode, temperature, rng):
    """Row-wise candidate index from (B, K) log-flows."""
    logits = np.atleast_2d(logits)
    if mode == "greedy":
        return np.argmax(logits, axis=-1)
    if mode == "sample":
        return kernels.categorical(logits, rng.random(logits.shape[0]), temperature)
    if mode == "random":
        return np.zeros(logits.shape[0], dtype=np.int64)
    raise UsageError(f"unknown mode {mode!r}")


def select_action(model, agent_index, o, candidates, mode="sample", temperature=1.0, rng=None):
    candidates = np.asarray(candidates, dtype=np.float64)
    if candidates.ndim != 2 or len(candidates) == 0:
        raise UsageError("candidates must be a non-empty (K, d) array")
    logf = model.log_flows(agent_index, o, candidates)
    return candidates[int(choose(logf[None, :], mode, temperature, rng)[0])]


def joint_policy_grid(per_agent_logflows, temperature=1.0):
    """Softmax of summed log-flows over the full product grid of candidates.

    ``per_agent_logflows`` is a list of 1D arrays (one per agent). The result
    has shape (K_1, ..., K_N).
    """
    grids = np.meshgrid(*[np.asarray(l, dtype=np.float64) for l in per_agent_logflows], indexing="ij")
    joint = np.sum(grids, axis=0)
    return softmax(joint.reshape(-1), temperature).reshape(joint.shape)


def product_policy_grid(per_agent_logflows, temperature=1.0):
    probs = [softmax(l, temperature) for l in per_agent_logflows]
    out = probs[0]
    for p in probs[1:]:
        out = np.multiply.outer(out, p)
    return out


@dataclass
class Trajectory:
    """One episode (or a batch of synchronous episodes on a leading axis).

    Index t runs over states 0..T; ``actions[t]`` moves s_t to s_{t+1};
    ``rewards[t]`` is R(s_t), zero everywhere but the terminal state.
    """

    agents: np.ndarray  # (..., T+1, N, d)
    targets: np.ndarray  # (..., M, d)
    obstacles: np.ndarray  # (..., L, d)
    obs: np.ndarray  # (..., T+1, N, obs_dim)
    actions: np.ndarray  # (..., T, N, d)
    rewards: np.ndarray  # (..., T+1)

    @property
    def horizon(self):
        return self.actions.shape[-3]

    @property
    def terminal(self):
        flags = np.zeros(self.rewards.shape, dtype=bool)
        flags[..., -1] = True
        return flags

    @property
    def terminal_reward(self):
        return self.rewards[..., -1]

    def __len__(self):
        return self.agents.shape[0] if self.agents.ndim == 4 else 1

    def __getitem__(self, i):
        if self.agents.ndim != 4:
            raise UsageError("not a batch")
        return Trajectory(self.agents[i], self.targets[i], self.obstacles[i], self.obs[i], self.actions[i], self.rewards[i])

    def records(self):
        T = self.horizon
        for t in range(T + 1):
            yield {
                "t": t,
                "agents": self.agents[t],
                "obs": self.obs[t],
                "action": self.actions[t] if t < T else None,
                "reward": float(self.rewards[t]),
                "terminal": t == T,
            }


def stack(trajs):
    return Trajectory(*(np.stack([getattr(tr, f) for tr in trajs]) for f in
                        ("agents", "targets", "obstacles", "obs", "actions", "rewards")))


def rollout_batch(spec, model, mode, rng, n_episodes, k_hat=20, temperature=1.0, layout=None):
    """Run ``n_episodes`` synchronous episodes; returns a batched Trajectory.

    Each episode draws its own layout from ``rng`` unless an unbatched
    ``layout`` state is given, in which case every episode starts from it.
    """
    if mode not in MODES:
        raise UsageError(f"unknown mode {mode!r}")
    B, T, N = int(n_episodes), spec.horizon, spec.n_agents
    if layout is not None:
        state = envs.EnvState(*(np.broadcast_to(x, (B,) + x.shape).copy()
                                for x in (layout.agents, layout.targets, layout.obstacles)), 0)
    else:
        state = envs.reset(spec, rng, batch=B)
    agents = np.empty((B, T + 1, N, spec.pos_dim))
    obs = np.empty((B, T + 1, N, spec.obs_dim))
    actions = np.empty((B, T, N, spec.pos_dim))
    rewards = np.zeros((B, T + 1))
    for t in range(T):
        agents[:, t] = state.agents
        o = envs.observe_all(spec, state)
        obs[:, t] = o
        cands = sample_candidates(spec, k_hat, rng, lead=(B,))
        if mode == "random":
            actions[:, t] = cands[:, :, 0]
        else:
            for i in range(N):
                logf = model.log_flows(i, o[:, i, None, :], cands[:, i])
                idx = choose(logf, mode, temperature, rng)
                actions[:, t, i] = cands[np.arange(B), i, idx]
        state, r, _ = envs.step(spec, state, actions[:, t])
    agents[:, T] = state.agents
    obs[:, T] = envs.observe_all(spec, state)
    rewards[:, T] = r
    return Trajectory(agents, state.targets, state.obstacles, obs, actions, rewards)


def rollout(spec, model, mode, rng, k_hat=20, temperature=1.0):
    return rollout_batch(spec, model, mode, rng, 1, k_hat, temperature)[0]
