"""Evaluation metrics: test return, distinct-trajectory count, terminal histograms."""

from dataclasses import asdict, dataclass

import numpy as np

from . import envs, kernels
from .errors import UsageError
from .sampler import Trajectory, rollout_batch


def avg_test_return(spec, model, mode, n_episodes, rng, k_hat=20, temperature=1.0, chunk=2000):
    if n_episodes < 1:
        raise UsageError("n_episodes must be >= 1")
    rewards = []
    for lo in range(0, n_episodes, chunk):
        tr = rollout_batch(spec, model, mode, rng, min(chunk, n_episodes - lo), k_hat, temperature)
        rewards.append(tr.terminal_reward)
    r = np.concatenate(rewards)
    return float(r.mean()), float(r.std()), r


def _positions(tau):
    return tau.agents if isinstance(tau, Trajectory) else np.asarray(tau, dtype=np.float64)


def trajectory_distance(tau1, tau2):
    """Time-averaged, agent-averaged Euclidean distance between position sequences."""
    p, q = _positions(tau1), _positions(tau2)
    if p.shape != q.shape:
        raise UsageError(f"trajectory shapes differ: {p.shape} vs {q.shape}")
    return float(np.sqrt(((p - q) ** 2).sum(-1)).mean())


@dataclass
class DiversityReport:
    n_collected: int
    n_valid: int
    n_distinct: int
    threshold: float
    validity_floor: float
    mean_pairwise_distance: float
    min_pairwise_distance: float
    max_pairwise_distance: float

    def to_dict(self):
        return asdict(self)


def count_distinct(trajectories, threshold, validity_floor=None, sample_pairs=500):
    """Greedy, order-dependent threshold dedup over valid trajectories.

    A trajectory is valid when its terminal reward exceeds ``validity_floor``
    (all are valid when it is None). It counts as distinct when its distance
    to every previously accepted trajectory is at least ``threshold``.
    """
    if not threshold > 0:
        raise UsageError("threshold must be > 0")
    if isinstance(trajectories, Trajectory):
        paths = trajectories.agents if trajectories.agents.ndim == 4 else trajectories.agents[None]
        final = np.atleast_1d(trajectories.terminal_reward)
    else:
        trajectories = list(trajectories)
        paths = np.stack([_positions(t) for t in trajectories]) if trajectories else np.zeros((0, 1, 1, 1))
        final = np.array([t.terminal_reward if isinstance(t, Trajectory) else np.inf for t in trajectories])
    n = len(paths)
    valid = np.ones(n, dtype=bool) if validity_floor is None else final > validity_floor
    accepted = kernels.greedy_dedup(paths, valid, threshold) if n else np.zeros(0, dtype=bool)
    vp = paths[valid][:sample_pairs]
    if len(vp) >= 2:
        iu, ju = np.triu_indices(len(vp), 1)
        dist = np.sqrt(((vp[iu] - vp[ju]) ** 2).sum(-1)).mean(axis=(1, 2))
        stats = (float(dist.mean()), float(dist.min()), float(dist.max()))
    else:
        stats = (0.0, 0.0, 0.0)
    return DiversityReport(int(n), int(valid.sum()), int(accepted.sum()), float(threshold),
                           float("nan") if validity_floor is None else float(validity_floor), *stats)


def terminal_positions(spec, model, n_episodes, rng, k_hat=20, temperature=1.0, mode="sample", chunk=2000):
    out = []
    for lo in range(0, n_episodes, chunk):
        tr = rollout_batch(spec, model, mode, rng, min(chunk, n_episodes - lo), k_hat, temperature)
        out.append(tr.agents[:, -1].reshape(tr.agents.shape[0], -1))
    return np.concatenate(out)


def histogram(points, spec, bins):
    """Normalised histogram over the joint terminal-position box."""
    if bins < 2:
        raise UsageError("need at least 2 bins per dimension")
    A = spec.arena_half_width
    dim = points.shape[1]
    h, edges = np.histogramdd(points, bins=[bins] * dim, range=[(-A, A)] * dim)
    return h / h.sum(), edges


def terminal_histogram(spec, model, n_episodes, bins, rng, k_hat=20, temperature=1.0, mode="sample"):
    pts = terminal_positions(spec, model, n_episodes, rng, k_hat, temperature, mode)
    return histogram(pts, spec, bins)


def reward_histogram(spec, bins, nodes_per_bin=40):
    """Bin-integrated terminal reward, normalised; midpoint rule inside each bin.

    Only practical for small joint dimension (the bimodal toy is 2D).
    """
    A = spec.arena_half_width
    dim = spec.n_agents * spec.pos_dim
    n = bins * nodes_per_bin
    h = 2 * A / n
    x = -A + h * (np.arange(n) + 0.5)
    grid = np.stack(np.meshgrid(*([x] * dim), indexing="ij"), -1).reshape(-1, dim)
    state = envs.EnvState(grid.reshape(-1, spec.n_agents, spec.pos_dim),
                          np.zeros((len(grid), spec.n_targets, spec.pos_dim)),
                          np.zeros((len(grid), spec.n_obstacles, spec.pos_dim)), spec.horizon)
    if spec.n_targets and spec.targets is not None:
        state.targets[:] = np.asarray(spec.targets).reshape(spec.n_targets, spec.pos_dim)
    r = np.asarray(envs.terminal_reward(spec, state)).reshape([n] * dim)
    for ax in range(dim):
        shape = r.shape[:ax] + (bins, nodes_per_bin) + r.shape[ax + 1:]
        r = r.reshape(shape).sum(axis=ax + 1)
    return r / r.sum()


def tv_distance(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def toy_mode_masses(points, spec):
    """Mass on either side of x1 = 0, i.e. nearer each reward bump."""
    lo = (points[:, 0] < 0).mean()
    hi = (points[:, 0] > 0).mean()
    return float(lo), float(hi)
