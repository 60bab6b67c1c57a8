"""Per-agent log-edge-flow networks, the inverse transition model, checkpoints."""

import dataclasses
import json

import numpy as np

from .autodiff import AdamState, Mlp, ParamStore
from .envs import EnvSpec, obs_layout
from .errors import CheckpointVersionError, DivergedError, UsageError

CHECKPOINT_FORMAT = "macfn-checkpoint"
CHECKPOINT_VERSION = 1


def _obs_scale(spec):
    scale = np.full(spec.obs_dim, 1.0 / spec.arena_half_width)
    scale[obs_layout(spec)["time"]] = 1.0
    return scale


class FlowModel:
    """N flow heads F_i(o, a) -> log edge flow; the joint flow is their product."""

    def __init__(self, spec, hidden=(64, 64), activation="tanh", shared=False, rng=None, zero=False):
        self.spec = spec
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.shared = bool(shared)
        self.store = ParamStore()
        self.in_dim = spec.obs_dim + spec.pos_dim
        dims = (self.in_dim,) + self.hidden + (1,)
        n_nets = 1 if self.shared else spec.n_agents
        self.nets = [Mlp(self.store, f"flow{i}", dims, activation, rng=rng, zero=zero) for i in range(n_nets)]
        self._scale = np.concatenate([_obs_scale(spec), np.full(spec.pos_dim, 1.0 / spec.action_bound)])

    @property
    def n_agents(self):
        return self.spec.n_agents

    def net(self, agent_index):
        if not 0 <= agent_index < self.spec.n_agents:
            raise UsageError(f"agent index {agent_index} out of range")
        return self.nets[0 if self.shared else agent_index]

    def features(self, obs, actions):
        obs = np.asarray(obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        if obs.shape[-1] != self.spec.obs_dim or actions.shape[-1] != self.spec.pos_dim:
            raise UsageError(f"expected obs width {self.spec.obs_dim} and action width {self.spec.pos_dim}")
        obs, actions = np.broadcast_arrays(obs[..., :, None], actions[..., None, :])
        x = np.concatenate([obs[..., :, 0], actions[..., 0, :]], axis=-1)
        return x * self._scale

    def log_flows(self, agent_index, obs, actions):
        """Vectorised log F_i over matching leading axes of ``obs`` and ``actions``."""
        x = self.features(obs, actions)
        out = self.net(agent_index)(x.reshape(-1, self.in_dim))[:, 0].reshape(x.shape[:-1])
        if not np.all(np.isfinite(out)):
            raise DivergedError(f"non-finite log-flow from agent {agent_index}")
        return out

    def log_flows_taped(self, tape, agent_index, obs, actions):
        x = self.features(obs, actions)
        lead = x.shape[:-1]
        out = self.net(agent_index).apply(tape, x.reshape(-1, self.in_dim))
        return tape.reshape(out, lead)


def log_edge_flow(model, agent_index, o, a):
    return float(model.log_flows(agent_index, o, a))


def joint_log_flow(model, observations, actions):
    """log of the product of individual edge flows = sum of individual log flows."""
    observations = np.asarray(observations, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if observations.shape[0] != model.n_agents or actions.shape[0] != model.n_agents:
        raise UsageError("need one observation and one action per agent")
    return float(sum(log_edge_flow(model, i, observations[i], actions[i]) for i in range(model.n_agents)))


class InverseModel:
    """Predicts o_t from (o_{t+1}, a_t).

    ``analytic`` subtracts the action from the own-position block, shifts the
    (static) entity offsets by the action, steps the time feature back, and
    passes the other agents' offsets through unchanged. ``learned`` is an MLP
    over (o_{t+1}, a_t, agent one-hot) whose output is a correction added to
    o_{t+1}.
    """

    def __init__(self, spec, mode="learned", hidden=(64, 64), activation="tanh", rng=None):
        if mode not in ("learned", "analytic"):
            raise UsageError(f"unknown inverse mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.hidden = tuple(int(h) for h in hidden)
        self.activation = activation
        self.store = ParamStore()
        self.layout = obs_layout(spec)
        self.in_dim = spec.obs_dim + spec.pos_dim + spec.n_agents
        self._obs_scale = _obs_scale(spec)
        self.net = None
        if mode == "learned":
            dims = (self.in_dim,) + self.hidden + (spec.obs_dim,)
            self.net = Mlp(self.store, "inverse", dims, activation, rng=rng)

    def features(self, o_next, a, agent_index):
        o_next = np.asarray(o_next, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        o_next, a_b = np.broadcast_arrays(o_next[..., :, None], a[..., None, :])
        o_next, a = o_next[..., :, 0], a_b[..., 0, :]
        onehot = np.zeros(o_next.shape[:-1] + (self.spec.n_agents,))
        onehot[..., agent_index] = 1.0
        return np.concatenate([o_next * self._obs_scale, a / self.spec.action_bound, onehot], axis=-1)

    def analytic(self, o_next, a):
        o_next = np.asarray(o_next, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        o_next, a_b = np.broadcast_arrays(o_next[..., :, None], a[..., None, :])
        o, a = o_next[..., :, 0].copy(), a_b[..., 0, :]
        d = self.spec.pos_dim
        lay = self.layout
        o[..., lay["own"]] -= a
        ent = lay["entities"]
        if ent.stop > ent.start:
            block = o[..., ent].reshape(o.shape[:-1] + (-1, d))
            seen = np.any(block != 0.0, axis=-1, keepdims=True)
            block = np.where(seen, block + a[..., None, :], block)
            o[..., ent] = block.reshape(o.shape[:-1] + (-1,))
        o[..., lay["time"]] -= 1.0 / self.spec.horizon
        return o

    def predict_parent(self, o_next, a, agent_index=0):
        if self.mode == "analytic":
            return self.analytic(o_next, a)
        x = self.features(o_next, a, agent_index)
        delta = self.net(x.reshape(-1, self.in_dim)).reshape(x.shape[:-1] + (self.spec.obs_dim,))
        o_next = np.broadcast_to(np.asarray(o_next, dtype=np.float64), delta.shape)
        return o_next + delta / self._obs_scale

    def residual_target(self, o_prev, o_next):
        """Regression target for the learned net, in normalised units."""
        return (np.asarray(o_prev) - np.asarray(o_next)) * self._obs_scale


def predict_parent(inv, o_next, a, agent_index=0):
    return inv.predict_parent(o_next, a, agent_index)


# -- checkpoints -------------------------------------------------------------

def _spec_to_dict(spec):
    d = dataclasses.asdict(spec)
    for k in ("targets", "start"):
        if d[k] is not None:
            d[k] = np.asarray(d[k], dtype=float).tolist()
    return d


def _spec_from_dict(d):
    d = dict(d)
    if d.get("targets") is not None:
        d["targets"] = tuple(tuple(p) for p in d["targets"])
    if d.get("start") is not None:
        d["start"] = tuple(d["start"])
    return EnvSpec(**d)


def save_checkpoint(path, model, inverse, flow_opt=None, inv_opt=None, rng_state=None, train_step=0, extra=None):
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "spec": _spec_to_dict(model.spec),
        "flow": {
            "layer_dims": list(model.nets[0].layer_dims),
            "activations": list(model.nets[0].activations),
            "shared": model.shared,
            "n_nets": len(model.nets),
        },
        "inverse": {
            "mode": inverse.mode,
            "layer_dims": list(inverse.net.layer_dims) if inverse.net else None,
            "activations": list(inverse.net.activations) if inverse.net else None,
        },
        "train_step": int(train_step),
        "rng_state": rng_state,
        "extra": extra or {},
    }
    arrays = {
        "meta": np.array(json.dumps(meta)),
        "flow_params": model.store.theta,
        "inverse_params": inverse.store.theta,
    }
    for tag, opt in (("flow", flow_opt), ("inverse", inv_opt)):
        if opt is not None:
            arrays[f"{tag}_adam_m"] = opt.m
            arrays[f"{tag}_adam_v"] = opt.v
            arrays[f"{tag}_adam_hyper"] = np.array([opt.step_count, opt.lr, opt.beta1, opt.beta2, opt.eps_adam])
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns a dict with model, inverse, flow_opt, inv_opt, rng_state, train_step, extra."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise CheckpointVersionError(f"{path}: not a macfn checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise CheckpointVersionError(
                f"{path}: checkpoint version {meta.get('version')} unsupported (expected {CHECKPOINT_VERSION})")
        spec = _spec_from_dict(meta["spec"])
        fl = meta["flow"]
        model = FlowModel(spec, hidden=fl["layer_dims"][1:-1], activation=fl["activations"], shared=fl["shared"])
        model.store.theta[:] = z["flow_params"]
        inv_meta = meta["inverse"]
        if inv_meta["mode"] == "learned":
            inverse = InverseModel(spec, "learned", hidden=inv_meta["layer_dims"][1:-1], activation=inv_meta["activations"])
        else:
            inverse = InverseModel(spec, "analytic")
        inverse.store.theta[:] = z["inverse_params"]
        opts = {}
        for tag in ("flow", "inverse"):
            if f"{tag}_adam_m" in z:
                h = z[f"{tag}_adam_hyper"]
                opts[tag] = AdamState(z[f"{tag}_adam_m"].copy(), z[f"{tag}_adam_v"].copy(), int(h[0]),
                                      float(h[1]), float(h[2]), float(h[3]), float(h[4]))
    return {
        "model": model,
        "inverse": inverse,
        "flow_opt": opts.get("flow"),
        "inv_opt": opts.get("inverse"),
        "rng_state": meta["rng_state"],
        "train_step": meta["train_step"],
        "extra": meta["extra"],
        "meta": meta,
    }
