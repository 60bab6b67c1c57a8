"""Monte-Carlo flow-integral estimator checks against quadrature ground truth.

Flows here are closed-form, strictly positive and separable across agents:
F(s, a) = prod_i f_i(o_i, a_i), each f_i acting on a d-dimensional
observation and action. The action box is [-b, b]^(N*d).
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .errors import OracleError, UsageError

KINDS = ("constant", "gaussian_bump", "separable_product")


@dataclass
class AnalyticFlow:
    kind: str = "gaussian_bump"
    n_agents: int = 1
    act_dim: int = 1
    bound: float = 1.0
    # constant: value; gaussian_bump: floor, height, width, center, shift;
    # separable_product: amp, freq, phases (one per agent)
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown analytic flow {self.kind!r}")
        p = dict(constant={"value": 1.5},
                 gaussian_bump={"floor": 0.1, "height": 1.0, "width": 0.3, "center": 0.2, "shift": 0.5},
                 separable_product={"amp": 0.5, "freq": 2.0, "phases": None})[self.kind]
        p.update(self.params)
        if self.kind == "separable_product" and p["phases"] is None:
            p["phases"] = [0.7 * i for i in range(self.n_agents)]
        self.params = p

    # per-agent factor and its constants
    def factor(self, i, o, a):
        """f_i(o, a) for broadcastable (..., d) arrays."""
        p = self.params
        if self.kind == "constant":
            return np.full(np.broadcast_shapes(np.shape(o)[:-1], np.shape(a)[:-1]), float(p["value"]))
        if self.kind == "gaussian_bump":
            z = a - p["shift"] * o - p["center"]
            return p["floor"] + p["height"] * np.exp(-(z * z).sum(-1) / (2 * p["width"] ** 2))
        g = 1.0 + p["amp"] * np.sin(p["freq"] * a + o + p["phases"][i])
        return g.prod(-1)

    def factor_max(self, i):
        p = self.params
        if self.kind == "constant":
            return float(p["value"])
        if self.kind == "gaussian_bump":
            return p["floor"] + p["height"]
        return (1.0 + p["amp"]) ** self.act_dim

    def factor_lipschitz(self, i):
        """Lipschitz constant of f_i jointly in (o, a), Euclidean norm."""
        p = self.params
        if self.kind == "constant":
            return 0.0
        if self.kind == "gaussian_bump":
            return math.sqrt(1 + p["shift"] ** 2) * p["height"] * math.exp(-0.5) / p["width"]
        d = self.act_dim
        return p["amp"] * math.sqrt(1 + p["freq"] ** 2) * (1 + p["amp"]) ** (d - 1) * math.sqrt(d)

    def __call__(self, state, actions):
        """Joint flow for state (N, d) and actions (..., N, d)."""
        out = 1.0
        for i in range(self.n_agents):
            out = out * self.factor(i, state[i], actions[..., i, :])
        return out

    @property
    def lipschitz(self):
        tot = 0.0
        for i in range(self.n_agents):
            others = np.prod([self.factor_max(k) for k in range(self.n_agents) if k != i])
            tot += (self.factor_lipschitz(i) * others) ** 2
        return math.sqrt(tot)

    @property
    def measure(self):
        return (2.0 * self.bound) ** (self.n_agents * self.act_dim)

    @property
    def diameter(self):
        return 2.0 * self.bound * math.sqrt(self.n_agents * self.act_dim)


def _actions(flow, K, rng, lead=()):
    return rng.uniform(-flow.bound, flow.bound, size=tuple(lead) + (int(K), flow.n_agents, flow.act_dim))


def mc_estimate(flow, state, K, rng, actions=None):
    """mu(A)/K * sum_k prod_i f_i(o_i, a_ik) with uniform i.i.d. joint actions."""
    if K < 1:
        raise UsageError("K must be >= 1")
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    if actions is None:
        actions = _actions(flow, K, rng)
    return flow.measure * float(np.mean(flow(state, actions)))


def _mc_many(flow, state, K, n, rng, parent=False, eta=0.0, chunk_elems=4_000_000):
    """n independent estimates, vectorised in chunks; optionally the parent-side form."""
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    out = np.empty(n)
    per = max(1, chunk_elems // (K * flow.n_agents * flow.act_dim))
    for lo in range(0, n, per):
        hi = min(n, lo + per)
        a = _actions(flow, K, rng, lead=(hi - lo,))
        out[lo:hi] = flow.measure * _integrand(flow, state, a, parent, eta, rng).mean(-1)
    return out


def _integrand(flow, state, a, parent, eta, rng):
    if not parent:
        return flow(state, a)
    obs = state - a
    if eta:
        u = rng.normal(size=a.shape)
        flat = u.reshape(u.shape[:-2] + (-1,))
        u = (flat / np.linalg.norm(flat, axis=-1, keepdims=True)).reshape(a.shape)
        obs = obs + eta * u
    vals = 1.0
    for i in range(flow.n_agents):
        vals = vals * flow.factor(i, obs[..., i, :], a[..., i, :])
    return vals


def _midpoint(fn, dim, bound, n):
    """Composite midpoint rule of fn over [-bound, bound]^dim with n nodes per axis."""
    if bound == 0:
        return 0.0
    h = 2.0 * bound / n
    x = -bound + h * (np.arange(n) + 0.5)
    if dim == 1:
        return float(fn(x[:, None]).sum() * h)
    if dim == 2:
        total = 0.0
        rows = max(1, 2_000_000 // n)
        for lo in range(0, n, rows):
            X, Y = np.meshgrid(x[lo:lo + rows], x, indexing="ij")
            total += float(fn(np.stack([X, Y], -1)).sum())
        return total * h * h
    raise UsageError("quadrature supports per-agent dimension 1 or 2")


def quadrature_integral(flow, nodes=64, state=None, parent=False, rtol=1e-6, max_nodes=1 << 14):
    """Integral of the joint flow over the action box (or of the parent-side integrand).

    Uses the product structure: the joint integral is the product of per-agent
    integrals. Each per-agent integral starts at ``nodes`` points per axis and
    halves the step until successive results agree to ``rtol``.
    """
    if nodes < 16:
        raise UsageError("need at least 16 nodes per dimension")
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    total = 1.0
    for i in range(flow.n_agents):
        if parent:
            fn = lambda a, i=i: flow.factor(i, state[i] - a, a)
        else:
            fn = lambda a, i=i: flow.factor(i, state[i], a)
        n = int(nodes)
        prev = _midpoint(fn, flow.act_dim, flow.bound, n)
        while True:
            if 2 * n > max_nodes:
                raise OracleError(f"midpoint refinement did not reach rtol={rtol} by {n} nodes")
            n *= 2
            cur = _midpoint(fn, flow.act_dim, flow.bound, n)
            if abs(cur - prev) <= rtol * abs(cur) or cur == prev:
                break
            prev = cur
        total *= cur
    return total


def gaussian_closed_form(flow, state=None):
    """erf antiderivative of the gaussian_bump joint integral."""
    if flow.kind != "gaussian_bump":
        raise UsageError("closed form only for gaussian_bump")
    p = flow.params
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    b, w = flow.bound, p["width"]
    total = 1.0
    for i in range(flow.n_agents):
        c = p["shift"] * state[i] + p["center"]
        per_dim = [w * math.sqrt(math.pi / 2) * (math.erf((b - cj) / (math.sqrt(2) * w)) -
                                                  math.erf((-b - cj) / (math.sqrt(2) * w))) for cj in c]
        total *= p["floor"] * (2 * b) ** flow.act_dim + p["height"] * math.prod(per_dim)
    return total


def binomial_slack(p, n, k=3.0):
    p = min(max(p, 0.0), 1.0)
    return k * math.sqrt(p * (1 - p) / n)


def _exceedance(est, truth, radius):
    # deviations at round-off level count as exact, so a zero radius is not
    # "exceeded" by a zero-variance estimator
    err = np.abs(est - truth)
    tol = 1e-12 * max(abs(truth), 1.0)
    return float(np.mean((err >= radius) & (err > tol)))


def concentration_trial(flow, K, delta, n_trials, rng, state=None, lipschitz_scale=1.0, truth=None):
    """Fraction of trials where |estimate - integral| >= delta*L*mu*diam/sqrt(K)."""
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    if truth is None:
        truth = quadrature_integral(flow, state=state)
    est = _mc_many(flow, state, K, n_trials, rng)
    L = flow.lipschitz * lipschitz_scale
    radius = delta * L * flow.measure * flow.diameter / math.sqrt(K)
    freq = _exceedance(est, truth, radius)
    bound = 2.0 * math.exp(-delta ** 2 / 2)
    slack = binomial_slack(bound, n_trials)
    return {"K": int(K), "delta": float(delta), "N": flow.n_agents, "radius": radius, "exceedance": freq,
            "bound": bound, "slack": slack, "passed": freq <= bound + slack}


def inflow_estimate_with_inverse(flow, state, K, rng, eta=0.0, actions=None):
    """Parent-side estimate mu/K * sum_k prod_i f_i(s_i - a_ik (+ noise), a_ik).

    ``eta`` injects a parent-prediction error of Euclidean norm ``eta`` (joint
    over agents) in a random direction per sample.
    """
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    if actions is None:
        actions = _actions(flow, K, rng)
    return flow.measure * float(np.mean(_integrand(flow, state, actions, True, eta, rng)))


def inverse_concentration_trial(flow, K, delta, n_trials, rng, state=None, diam_s=None):
    """Second-form check: radius uses diam(A) + diam(S) with the exact inverse."""
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    diam_s = flow.diameter if diam_s is None else diam_s
    truth = quadrature_integral(flow, state=state, parent=True)
    est = _mc_many(flow, state, K, n_trials, rng, parent=True)
    radius = delta * flow.lipschitz * flow.measure * (flow.diameter + diam_s) / math.sqrt(K)
    freq = _exceedance(est, truth, radius)
    bound = 2.0 * math.exp(-delta ** 2 / 2)
    slack = binomial_slack(bound, n_trials)
    return {"K": int(K), "delta": float(delta), "N": flow.n_agents, "radius": radius, "exceedance": freq,
            "bound": bound, "slack": slack, "passed": freq <= bound + slack}


def unbiasedness_check(flow, K, n_rep, rng, state=None, k_sigma=3.0):
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    truth = quadrature_integral(flow, state=state)
    est = _mc_many(flow, state, K, n_rep, rng)
    stderr = float(est.std(ddof=1) / math.sqrt(n_rep))
    mean = float(est.mean())
    return {"kind": flow.kind, "N": flow.n_agents, "K": int(K), "mean": mean, "truth": truth,
            "stderr": stderr, "passed": abs(mean - truth) <= k_sigma * stderr + 1e-12 * abs(truth)}


def perturbation_check(flow, K, eta, n_trials, rng, state=None):
    """Injected inverse error: |perturbed - exact| <= mu * L * eta on shared samples."""
    if state is None:
        state = np.zeros((flow.n_agents, flow.act_dim))
    state = np.asarray(state, dtype=np.float64).reshape(flow.n_agents, flow.act_dim)
    worst = 0.0
    for _ in range(n_trials):
        a = _actions(flow, K, rng)
        exact = flow.measure * float(np.mean(_integrand(flow, state, a, True, 0.0, rng)))
        pert = flow.measure * float(np.mean(_integrand(flow, state, a, True, eta, rng)))
        worst = max(worst, abs(pert - exact))
    limit = flow.measure * flow.lipschitz * eta
    return {"eta": eta, "max_added_error": worst, "limit": limit, "passed": worst <= limit}


# -- suites for the CLI -------------------------------------------------------

def run_suite(suite, rng, n_trials=10_000, ks=(100, 1000), deltas=(1.0, 2.0, 3.0), ns=(1, 2),
              lipschitz_scale=1.0, n_rep=1000, k_unbiased=10_000):
    rows = []
    if suite in ("constant", "all"):
        flow = AnalyticFlow("constant", 1, 1)
        est = mc_estimate(flow, [0.0], 17, rng)
        rows.append({"check": "constant_exact", "value": est, "expected": 2.0 * flow.params["value"],
                     "passed": est == 2.0 * flow.params["value"]})
        for d in deltas:
            r = concentration_trial(flow, 100, d, min(n_trials, 1000), rng, lipschitz_scale=lipschitz_scale)
            rows.append({"check": "constant_concentration", **r, "passed": r["exceedance"] == 0.0})
    if suite in ("unbiased", "all"):
        for flow in (AnalyticFlow("gaussian_bump", 1, 2), AnalyticFlow("separable_product", 2, 1)):
            rows.append({"check": "unbiased", **unbiasedness_check(flow, k_unbiased, n_rep, rng)})
    if suite in ("concentration", "all"):
        for n in ns:
            flow = AnalyticFlow("gaussian_bump", n, 1)
            truth = quadrature_integral(flow)
            for k in ks:
                for d in deltas:
                    r = concentration_trial(flow, k, d, n_trials, rng, lipschitz_scale=lipschitz_scale, truth=truth)
                    rows.append({"check": "concentration", **r})
    if suite in ("inverse", "all"):
        for n in ns:
            flow = AnalyticFlow("gaussian_bump", n, 1)
            for d in deltas:
                rows.append({"check": "inverse_concentration",
                             **inverse_concentration_trial(flow, ks[0], d, min(n_trials, 2000), rng)})
            rows.append({"check": "inverse_perturbation", "N": n, **perturbation_check(flow, ks[0], 0.01, 200, rng)})
    if not rows:
        raise UsageError(f"unknown oracle suite {suite!r}")
    return rows
