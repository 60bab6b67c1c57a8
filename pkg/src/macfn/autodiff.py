"""Reverse-mode autodiff over dense numpy blocks, small MLPs, and Adam.

A :class:`Tape` is an append-only list of nodes. Each node stores its op
kind, the indices of its inputs and its cached value, so inputs always
precede the node that consumes them. Parameter leaves remember where they
live inside a flat :class:`ParamStore` vector; :func:`backward` scatters
their adjoints back into a gradient vector of the same length.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergedError, UsageError


class ParamStore:
    """Flat float64 parameter vector with named, reshaped views."""

    def __init__(self):
        self.theta = np.zeros(0)
        self._slots = {}

    def add(self, name, shape, init=None):
        if name in self._slots:
            raise UsageError(f"duplicate parameter name {name!r}")
        size = int(np.prod(shape))
        offset = self.theta.size
        block = np.zeros(size) if init is None else np.asarray(init, dtype=np.float64).reshape(size)
        self.theta = np.concatenate([self.theta, block])
        self._slots[name] = (offset, tuple(shape))
        return name

    def slot(self, name):
        return self._slots[name]

    def view(self, name):
        offset, shape = self._slots[name]
        return self.theta[offset:offset + int(np.prod(shape))].reshape(shape)

    def names(self):
        return list(self._slots)

    def __len__(self):
        return self.theta.size


@dataclass
class Node:
    op: str
    inputs: tuple
    value: np.ndarray
    aux: object = None


class Var:
    __slots__ = ("tape", "idx")
    __array_priority__ = 100

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return self.tape.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __rsub__(self, other):
        return self.tape.sub(other, self)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return self.tape.mul(self, -1.0)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


class Tape:
    def __init__(self):
        self.nodes = []
        self.outputs = []
        self.params = {}  # node index -> (offset, shape) in the ParamStore

    def _push(self, op, inputs, value, aux=None):
        self.nodes.append(Node(op, tuple(inputs), value, aux))
        return Var(self, len(self.nodes) - 1)

    def _lift(self, x):
        if isinstance(x, Var):
            return x
        return self.const(x)

    # leaves
    def const(self, value):
        return self._push("const", (), np.asarray(value, dtype=np.float64))

    def param(self, store, name):
        v = self._push("param", (), store.view(name))
        self.params[v.idx] = store.slot(name)
        return v

    # elementwise / linear ops
    def add(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("add", (a.idx, b.idx), a.value + b.value)

    def sub(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("sub", (a.idx, b.idx), a.value - b.value)

    def mul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("mul", (a.idx, b.idx), a.value * b.value)

    def matmul(self, a, b):
        a, b = self._lift(a), self._lift(b)
        return self._push("matmul", (a.idx, b.idx), a.value @ b.value)

    def tanh(self, a):
        return self._push("tanh", (a.idx,), np.tanh(a.value))

    def relu(self, a):
        return self._push("relu", (a.idx,), np.maximum(a.value, 0.0))

    def exp(self, a):
        return self._push("exp", (a.idx,), np.exp(a.value))

    def log(self, a):
        return self._push("log", (a.idx,), np.log(a.value))

    def square(self, a):
        return self._push("square", (a.idx,), a.value * a.value)

    def reshape(self, a, shape):
        return self._push("reshape", (a.idx,), a.value.reshape(shape), a.value.shape)

    def sum(self, a, axis=None):
        return self._push("sum", (a.idx,), np.asarray(a.value.sum(axis=axis)), (axis, a.value.shape))

    def logsumexp(self, a, axis=-1):
        x = a.value
        m = x.max(axis=axis, keepdims=True)
        w = np.exp(x - m)
        s = w.sum(axis=axis, keepdims=True)
        out = np.squeeze(m + np.log(s), axis=axis)
        return self._push("logsumexp", (a.idx,), out, (axis, w / s))

    def logaddexp(self, a, b):
        """log(exp(a) + exp(b)); ``b`` is usually a constant such as log(eps)."""
        a, b = self._lift(a), self._lift(b)
        return self._push("logaddexp", (a.idx, b.idx), np.logaddexp(a.value, b.value))

    def mark_output(self, v):
        self.outputs.append(v.idx)
        return v


def _backprop(tape, seed_idx, seed_grad):
    adj = [None] * len(tape.nodes)
    adj[seed_idx] = np.asarray(seed_grad, dtype=np.float64) * np.ones_like(tape.nodes[seed_idx].value)

    def acc(i, g):
        adj[i] = g if adj[i] is None else adj[i] + g

    for idx in range(seed_idx, -1, -1):
        g = adj[idx]
        if g is None:
            continue
        node = tape.nodes[idx]
        op, ins = node.op, node.inputs
        if op in ("const", "param"):
            continue
        vals = [tape.nodes[i].value for i in ins]
        if op == "add":
            acc(ins[0], _unbroadcast(g, vals[0].shape))
            acc(ins[1], _unbroadcast(g, vals[1].shape))
        elif op == "sub":
            acc(ins[0], _unbroadcast(g, vals[0].shape))
            acc(ins[1], _unbroadcast(-g, vals[1].shape))
        elif op == "mul":
            acc(ins[0], _unbroadcast(g * vals[1], vals[0].shape))
            acc(ins[1], _unbroadcast(g * vals[0], vals[1].shape))
        elif op == "matmul":
            a, b = vals
            if a.ndim == 1:
                acc(ins[0], b @ g)
                acc(ins[1], np.outer(a, g))
            else:
                acc(ins[0], g @ b.T)
                acc(ins[1], a.T @ g)
        elif op == "tanh":
            acc(ins[0], g * (1.0 - node.value * node.value))
        elif op == "relu":
            acc(ins[0], g * (vals[0] > 0))
        elif op == "exp":
            acc(ins[0], g * node.value)
        elif op == "log":
            acc(ins[0], g / vals[0])
        elif op == "square":
            acc(ins[0], 2.0 * g * vals[0])
        elif op == "reshape":
            acc(ins[0], g.reshape(node.aux))
        elif op == "sum":
            axis, shape = node.aux
            if axis is None:
                acc(ins[0], np.broadcast_to(g, shape).copy())
            else:
                acc(ins[0], np.broadcast_to(np.expand_dims(g, axis), shape).copy())
        elif op == "logsumexp":
            axis, soft = node.aux
            acc(ins[0], np.expand_dims(g, axis) * soft)
        elif op == "logaddexp":
            a, b = vals
            wa = np.exp(a - node.value)
            acc(ins[0], _unbroadcast(g * wa, a.shape))
            acc(ins[1], _unbroadcast(g * (1.0 - wa), b.shape))
        else:  # pragma: no cover
            raise UsageError(f"unknown op {op}")
    return adj


def backward(tape, seed_grad=1.0, n_params=None):
    """Gradient of the tape's single scalar output w.r.t. every parameter.

    Returns a flat vector aligned with the ParamStore (length ``n_params``, or
    just past the highest parameter slot touched). Parameters the output
    does not depend on get exactly zero.
    """
    if len(tape.outputs) != 1:
        raise UsageError(f"backward needs exactly one output, tape has {len(tape.outputs)}")
    out = tape.outputs[0]
    if tape.nodes[out].value.size != 1:
        raise UsageError("backward output must be a scalar")
    adj = _backprop(tape, out, seed_grad)
    if n_params is None:
        n_params = max((o + int(np.prod(s)) for o, s in tape.params.values()), default=0)
    grad = np.zeros(n_params)
    for idx, (offset, shape) in tape.params.items():
        if adj[idx] is not None:
            grad[offset:offset + int(np.prod(shape))] += adj[idx].reshape(-1)
    return grad


def grad_wrt(tape, var, seed_grad=1.0):
    """Adjoint of an arbitrary node (used for leaf inputs in tests)."""
    if len(tape.outputs) != 1:
        raise UsageError(f"backward needs exactly one output, tape has {len(tape.outputs)}")
    adj = _backprop(tape, tape.outputs[0], seed_grad)
    g = adj[var.idx]
    return np.zeros_like(var.value) if g is None else g


# -- MLP ---------------------------------------------------------------------

ACTIVATIONS = ("tanh", "relu")


class Mlp:
    """Dense feed-forward net whose weights live in a shared ParamStore."""

    def __init__(self, store, prefix, layer_dims, activation="tanh", rng=None, zero=False):
        layer_dims = tuple(int(d) for d in layer_dims)
        if len(layer_dims) < 2 or min(layer_dims) < 1:
            raise UsageError(f"bad layer dims {layer_dims}")
        n_hidden = len(layer_dims) - 2
        acts = (activation,) * n_hidden if isinstance(activation, str) else tuple(activation)
        if len(acts) != n_hidden or any(a not in ACTIVATIONS for a in acts):
            raise UsageError(f"need one activation from {ACTIVATIONS} per hidden layer, got {acts}")
        self.store = store
        self.prefix = prefix
        self.layer_dims = layer_dims
        self.activations = acts
        self.names = []
        for l, (fan_in, fan_out) in enumerate(zip(layer_dims[:-1], layer_dims[1:])):
            w_name, b_name = f"{prefix}.W{l}", f"{prefix}.b{l}"
            if zero or rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            store.add(w_name, (fan_in, fan_out), w)
            store.add(b_name, (fan_out,))
            self.names.append((w_name, b_name))

    @property
    def n_params(self):
        d = self.layer_dims
        return sum((d[l] + 1) * d[l + 1] for l in range(len(d) - 1))

    @property
    def in_dim(self):
        return self.layer_dims[0]

    @property
    def out_dim(self):
        return self.layer_dims[-1]

    def _check(self, x):
        if x.shape[-1] != self.in_dim:
            raise ConfigError(f"{self.prefix}: input width {x.shape[-1]} != {self.in_dim}", "layer_dims")

    def __call__(self, x):
        """Plain numpy evaluation; same arithmetic as the taped path."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        h = x
        last = len(self.names) - 1
        for l, (w_name, b_name) in enumerate(self.names):
            h = h @ self.store.view(w_name) + self.store.view(b_name)
            if l < last:
                h = np.tanh(h) if self.activations[l] == "tanh" else np.maximum(h, 0.0)
        return h

    def apply(self, tape, x):
        x = tape._lift(x)
        self._check(x.value)
        h = x
        last = len(self.names) - 1
        for l, (w_name, b_name) in enumerate(self.names):
            h = tape.add(tape.matmul(h, tape.param(self.store, w_name)), tape.param(self.store, b_name))
            if l < last:
                h = tape.tanh(h) if self.activations[l] == "tanh" else tape.relu(h)
        return h


def forward(mlp, x):
    """Evaluate ``mlp`` on ``x`` and return (output, tape); output is marked."""
    tape = Tape()
    out = mlp.apply(tape, np.asarray(x, dtype=np.float64))
    tape.mark_output(out)
    return out.value, tape


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8

    @classmethod
    def zeros(cls, n, **kw):
        return cls(np.zeros(n), np.zeros(n), **kw)


def adam_step(params, grads, state):
    """In-place Adam update of ``params``; returns (params, state)."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise UsageError("params, grads and Adam moments must have equal length")
    bad = np.flatnonzero(~np.isfinite(grads))
    if bad.size:
        raise DivergedError(f"non-finite gradient at parameter index {bad[0]}", index=int(bad[0]))
    state.step_count += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grads
    state.v *= b2
    state.v += (1.0 - b2) * grads * grads
    m_hat = state.m / (1.0 - b1 ** state.step_count)
    v_hat = state.v / (1.0 - b2 ** state.step_count)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps_adam)
    return params, state
