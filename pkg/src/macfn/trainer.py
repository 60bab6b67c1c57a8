"""Centralised flow-matching objective, inverse-model regression, replay."""

from collections import deque
from dataclasses import dataclass, field
import math

import numpy as np

from .autodiff import Tape, adam_step, backward
from .errors import DivergedError, UsageError
from .envs import obs_layout
from .sampler import Trajectory, stack

TERMINAL_MODES = ("boundary", "literal")
_MASKED = -1e4


class ReplayBuffer:
    """Bounded FIFO of whole episodes with uniform sampling."""

    def __init__(self, capacity):
        if capacity < 1:
            raise UsageError("buffer capacity must be >= 1")
        self.capacity = int(capacity)
        self._items = deque(maxlen=self.capacity)

    def add(self, traj):
        self._items.append(traj)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def sample(self, batch_size, rng):
        if not self._items:
            raise UsageError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=int(batch_size))
        return [self._items[i] for i in idx]


@dataclass
class LossReport:
    flow_matching_loss: float
    inverse_loss: float = 0.0
    log_inflows: np.ndarray = field(default=None, repr=False)
    log_outflows: np.ndarray = field(default=None, repr=False)


# -- Monte-Carlo flow terms ---------------------------------------------------

def _product_of_sums(model, obs, actions):
    """prod_i sum_k exp F_i(obs_i, a_{i,k}) for obs (N, ..., D), actions (N, K, d).

    Each agent's sum is factored as exp(m_i) * s_i with m_i its max log-flow,
    so the product is exp(sum_i m_i) * prod_i s_i: exact when all flows are
    equal and safe from intermediate overflow.
    """
    log_scale, mant = 0.0, 1.0
    for i in range(model.n_agents):
        f = model.log_flows(i, obs[i], actions[i])
        m = float(f.max())
        log_scale += m
        mant *= float(np.exp(f - m).sum())
    if log_scale > 709.0:
        log_total = log_scale + math.log(mant)
        return math.exp(log_total) if log_total < 709.0 else math.inf
    return math.exp(log_scale) * mant


def compute_outflow_term(model, observations, reward, k_hat, terminal, rng, terminal_mode="boundary",
                         candidates=None):
    """R(s_t) + prod_i sum_k exp F_i(o_t^i, a^{i,k}); just R at a terminal state."""
    if terminal and terminal_mode == "boundary":
        return float(reward)
    if candidates is None:
        candidates = _uniform(model.spec, k_hat, rng)
    out = float(reward) + _product_of_sums(model, np.asarray(observations), candidates)
    if not math.isfinite(out):
        raise DivergedError("outflow overflowed")
    return out


def compute_inflow_term(model, inverse, observations, k_hat, rng, candidates=None):
    """prod_i sum_k exp F_i(G(o_t^i, a^{i,k}), a^{i,k})."""
    if candidates is None:
        candidates = _uniform(model.spec, k_hat, rng)
    observations = np.asarray(observations)
    parents = np.stack([inverse.predict_parent(observations[i][None, :], candidates[i], i)
                        for i in range(model.n_agents)])
    out = _product_of_sums(model, parents, candidates)
    if not math.isfinite(out):
        raise DivergedError("inflow overflowed")
    return out


def _uniform(spec, k_hat, rng, lead=()):
    if k_hat < 1:
        raise UsageError("K̂ must be >= 1")
    b = spec.action_bound
    return rng.uniform(-b, b, size=tuple(lead) + (spec.n_agents, int(k_hat), spec.pos_dim))


# -- batched loss ---------------------------------------------------------------

@dataclass
class LossBatch:
    """Everything the loss needs for states s_1..s_T of B episodes."""

    obs: np.ndarray  # (B, T, N, D)
    rewards: np.ndarray  # (B, T)
    terminal: np.ndarray  # (B, T) bool
    cand_out: np.ndarray  # (B, T, N, K, d)
    cand_in: np.ndarray  # (B, T, N, K, d)
    parents: np.ndarray  # (B, T, N, K, D)
    init_obs: np.ndarray = None  # (B, N, D)
    init_act: np.ndarray = None  # (B, N, d)
    parent_ok: np.ndarray = None  # (B, T, N, K) bool, None means all valid


def parent_validity(spec, parents, tol=1e-9):
    """True where a predicted parent's own position lies inside the arena."""
    own = parents[..., obs_layout(spec)["own"]]
    return np.all(np.abs(own) <= spec.arena_half_width + tol, axis=-1)


def make_loss_batch(model, inverse, trajs, k_hat, rng, cand_out=None, cand_in=None, mask_parents=False):
    batch = trajs if isinstance(trajs, Trajectory) and trajs.agents.ndim == 4 else stack(list(trajs))
    obs = batch.obs[:, 1:]
    B, T = obs.shape[:2]
    if cand_out is None:
        cand_out = _uniform(model.spec, k_hat, rng, lead=(B, T))
    if cand_in is None:
        cand_in = _uniform(model.spec, k_hat, rng, lead=(B, T))
    parents = np.stack([inverse.predict_parent(obs[:, :, i, None, :], cand_in[:, :, i], i)
                        for i in range(model.n_agents)], axis=2)
    terminal = np.zeros((B, T), dtype=bool)
    terminal[:, -1] = True
    ok = parent_validity(model.spec, parents) if mask_parents else None
    return LossBatch(obs, batch.rewards[:, 1:], terminal, cand_out, cand_in, parents,
                     batch.obs[:, 0], batch.actions[:, 0], ok)


def build_loss(tape, model, lb, eps=1.0, terminal_mode="boundary", initial_inflow="sampled"):
    """Sum over states of [log(eps + in) - log(eps + out)]^2, averaged over episodes.

    Returns (loss_var, log_in_var, log_out_var).
    """
    if terminal_mode not in TERMINAL_MODES:
        raise UsageError(f"unknown terminal mode {terminal_mode!r}")
    B = lb.obs.shape[0]
    log_in = log_out = None
    for i in range(model.n_agents):
        f_in = model.log_flows_taped(tape, i, lb.parents[:, :, i], lb.cand_in[:, :, i])
        if lb.parent_ok is not None:
            # parents outside the arena are not states; drop their edges
            f_in = tape.add(f_in, np.where(lb.parent_ok[:, :, i], 0.0, _MASKED))
        f_out = model.log_flows_taped(tape, i, lb.obs[:, :, i, None, :], lb.cand_out[:, :, i])
        s_in, s_out = tape.logsumexp(f_in, axis=-1), tape.logsumexp(f_out, axis=-1)
        log_in = s_in if log_in is None else tape.add(log_in, s_in)
        log_out = s_out if log_out is None else tape.add(log_out, s_out)
    if initial_inflow == "exact":
        # s_1 has the single parent s_0: inflow is the taken edge's flow density,
        # expressed in the same K/mu units as the sampled sums
        spec = model.spec
        k_hat = lb.cand_in.shape[-2]
        unit = math.log(k_hat) - spec.pos_dim * math.log(2 * spec.action_bound)
        exact = None
        for i in range(model.n_agents):
            f0 = model.log_flows_taped(tape, i, lb.init_obs[:, None, i], lb.init_act[:, None, i])
            exact = f0 if exact is None else tape.add(exact, f0)
        exact = tape.add(tape.reshape(exact, (B,)), model.n_agents * unit)
        first = np.zeros(lb.obs.shape[:2])
        first[:, 0] = 1.0
        exact_full = tape.mul(tape.reshape(exact, (B, 1)), first)
        log_in = tape.add(tape.mul(log_in, 1.0 - first), exact_full)
    lhs = tape.logaddexp(log_in, math.log(eps))
    log_eps_r = np.log(eps + lb.rewards)
    rhs = tape.logaddexp(log_out, log_eps_r)
    if terminal_mode == "boundary":
        mask = lb.terminal.astype(np.float64)
        rhs = tape.add(tape.mul(rhs, 1.0 - mask), mask * log_eps_r)
    diff = tape.sub(lhs, rhs)
    loss = tape.mul(tape.sum(tape.square(diff)), 1.0 / B)
    tape.mark_output(loss)
    return loss, log_in, log_out


def flow_matching_loss(model, inverse, trajectory, eps=1.0, k_hat=20, rng=None, terminal_mode="boundary",
                       cand_out=None, cand_in=None, with_grad=False, initial_inflow="sampled", mask_parents=False):
    """Loss (and optionally its gradient) for one trajectory or a batch."""
    trajs = [trajectory] if isinstance(trajectory, Trajectory) and trajectory.agents.ndim == 3 else trajectory
    lb = make_loss_batch(model, inverse, trajs, k_hat, rng, cand_out, cand_in, mask_parents)
    tape = Tape()
    loss, log_in, log_out = build_loss(tape, model, lb, eps, terminal_mode, initial_inflow)
    value = float(loss.value)
    if not math.isfinite(value):
        raise DivergedError("flow-matching loss is not finite")
    report = LossReport(value, 0.0, log_in.value, log_out.value)
    if with_grad:
        return report, backward(tape, 1.0, len(model.store))
    return report


# -- inverse model -------------------------------------------------------------

def transitions(trajs):
    """(o_{t+1}, a_t, o_t, agent) arrays over all steps and agents."""
    batch = trajs if isinstance(trajs, Trajectory) and trajs.agents.ndim == 4 else stack(list(trajs))
    o_next = batch.obs[:, 1:]
    o_prev = batch.obs[:, :-1]
    acts = batch.actions
    N = o_next.shape[2]
    agent = np.broadcast_to(np.arange(N), o_next.shape[:3])
    D, d = o_next.shape[-1], acts.shape[-1]
    return o_next.reshape(-1, D), acts.reshape(-1, d), o_prev.reshape(-1, D), agent.reshape(-1)


def inverse_mse(inverse, o_next, acts, o_prev, agent):
    pred = np.concatenate([inverse.predict_parent(o_next[agent == i], acts[agent == i], i)
                           for i in range(inverse.spec.n_agents)])
    target = np.concatenate([o_prev[agent == i] for i in range(inverse.spec.n_agents)])
    return float(np.mean((pred - target) ** 2))


def train_inverse(inverse, opt, trajs, batch_size, rng):
    """One Adam step of MSE regression for the learned inverse model.

    Returns the pre-step minibatch loss (arena units squared). Analytic
    inverses are not trained; their MSE is reported instead.
    """
    o_next, acts, o_prev, agent = transitions(trajs)
    if batch_size and batch_size < len(o_next):
        pick = rng.choice(len(o_next), size=int(batch_size), replace=False)
        o_next, acts, o_prev, agent = o_next[pick], acts[pick], o_prev[pick], agent[pick]
    if inverse.mode == "analytic":
        return inverse_mse(inverse, o_next, acts, o_prev, agent)
    x = inverse.features(o_next, acts, 0)
    x[:, -inverse.spec.n_agents:] = np.eye(inverse.spec.n_agents)[agent]
    target = inverse.residual_target(o_prev, o_next)
    tape = Tape()
    pred = inverse.net.apply(tape, x)
    err = tape.sub(pred, target)
    loss = tape.mul(tape.sum(tape.square(err)), 1.0 / err.value.size)
    tape.mark_output(loss)
    grad = backward(tape, 1.0, len(inverse.store))
    adam_step(inverse.store.theta, grad, opt)
    scale = inverse._obs_scale
    return float(np.mean((err.value / scale) ** 2))
