"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The numba path is used when numba imports and ``MACFN_PURE_NUMPY`` is unset
(or "0"). Both paths are always importable as ``np_<name>`` / ``nb_<name>``
so tests and ``benchmarks/bench_kernels.py`` can compare them directly.
"""

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MACFN_PURE_NUMPY", "0").lower() in ("", "0", "false", "no")


def _jit(fn):
    if not HAVE_NUMBA:
        return fn
    return njit(cache=True)(fn)


# -- coverage reward: floor + sum_j exp(-min_i |e_j - x_i|) ------------------

def np_coverage_reward(agents, entities, floor):
    agents = np.asarray(agents, dtype=np.float64)
    entities = np.asarray(entities, dtype=np.float64)
    diff = entities[..., :, None, :] - agents[..., None, :, :]
    dist = np.sqrt((diff * diff).sum(-1)).min(-1)
    return floor + np.exp(-dist).sum(-1)


@_jit
def _nb_coverage_reward(agents, entities, floor):
    B, N, d = agents.shape
    M = entities.shape[1]
    out = np.empty(B)
    for b in range(B):
        acc = 0.0
        for j in range(M):
            best = np.inf
            for i in range(N):
                s = 0.0
                for k in range(d):
                    z = entities[b, j, k] - agents[b, i, k]
                    s += z * z
                if s < best:
                    best = s
            acc += math.exp(-math.sqrt(best))
        out[b] = floor + acc
    return out


def nb_coverage_reward(agents, entities, floor):
    agents = np.asarray(agents, dtype=np.float64)
    entities = np.asarray(entities, dtype=np.float64)
    lead = agents.shape[:-2]
    a = np.ascontiguousarray(agents.reshape((-1,) + agents.shape[-2:]))
    e = np.ascontiguousarray(entities.reshape((-1,) + entities.shape[-2:]))
    out = _nb_coverage_reward(a, e, float(floor))
    return out.reshape(lead) if lead else float(out[0])


# -- categorical choice from log-weights -------------------------------------

def np_categorical(logits, uniforms, temperature):
    z = np.asarray(logits, dtype=np.float64) / temperature
    z = z - z.max(axis=-1, keepdims=True)
    p = np.exp(z)
    cdf = np.cumsum(p, axis=-1)
    target = uniforms * cdf[..., -1]
    idx = (cdf <= target[..., None]).sum(-1)
    return np.minimum(idx, z.shape[-1] - 1)


@_jit
def _nb_categorical(logits, uniforms, temperature):
    B, K = logits.shape
    out = np.empty(B, dtype=np.int64)
    p = np.empty(K)
    for b in range(B):
        m = -np.inf
        for k in range(K):
            v = logits[b, k] / temperature
            if v > m:
                m = v
        tot = 0.0
        for k in range(K):
            tot += math.exp(logits[b, k] / temperature - m)
            p[k] = tot
        target = uniforms[b] * tot
        j = 0
        while j < K - 1 and p[j] <= target:
            j += 1
        out[b] = j
    return out


def nb_categorical(logits, uniforms, temperature):
    logits = np.ascontiguousarray(np.atleast_2d(logits), dtype=np.float64)
    uniforms = np.ascontiguousarray(np.atleast_1d(uniforms), dtype=np.float64)
    return _nb_categorical(logits, uniforms, float(temperature))


# -- greedy threshold dedup of trajectories ----------------------------------

def np_greedy_dedup(paths, valid, threshold):
    """paths: (n, T, N, d). Returns a bool mask of accepted trajectories."""
    paths = np.asarray(paths, dtype=np.float64)
    n = paths.shape[0]
    accepted = np.zeros(n, dtype=bool)
    kept = []
    for i in range(n):
        if not valid[i]:
            continue
        if kept:
            ref = paths[np.asarray(kept)]
            diff = ref - paths[i]
            dist = np.sqrt((diff * diff).sum(-1)).mean(axis=(1, 2))
            if dist.min() < threshold:
                continue
        kept.append(i)
        accepted[i] = True
    return accepted


@_jit
def _nb_greedy_dedup(paths, valid, threshold):
    n, T, N, d = paths.shape
    accepted = np.zeros(n, dtype=np.bool_)
    kept = np.empty(n, dtype=np.int64)
    m = 0
    for i in range(n):
        if not valid[i]:
            continue
        ok = True
        for r in range(m):
            j = kept[r]
            acc = 0.0
            for t in range(T):
                for a in range(N):
                    s = 0.0
                    for k in range(d):
                        z = paths[i, t, a, k] - paths[j, t, a, k]
                        s += z * z
                    acc += math.sqrt(s)
            if acc / (T * N) < threshold:
                ok = False
                break
        if ok:
            kept[m] = i
            m += 1
            accepted[i] = True
    return accepted


def nb_greedy_dedup(paths, valid, threshold):
    paths = np.ascontiguousarray(paths, dtype=np.float64)
    valid = np.ascontiguousarray(valid, dtype=np.bool_)
    return _nb_greedy_dedup(paths, valid, float(threshold))


# -- project positions out of circular obstacles -----------------------------

def np_push_out(pos, centers, radius):
    pos = np.array(pos, dtype=np.float64)
    for c in range(centers.shape[-2]):
        diff = pos - centers[..., c:c + 1, :]
        dist = np.sqrt((diff * diff).sum(-1, keepdims=True))
        inside = dist < radius
        safe = np.where(dist > 0, dist, 1.0)
        unit = np.where(dist > 0, diff / safe, np.eye(1, pos.shape[-1])[0])
        pos = np.where(inside, centers[..., c:c + 1, :] + unit * radius, pos)
    return pos


@_jit
def _nb_push_out(pos, centers, radius):
    B, N, d = pos.shape
    L = centers.shape[1]
    out = pos.copy()
    for b in range(B):
        for c in range(L):
            for i in range(N):
                s = 0.0
                for k in range(d):
                    z = out[b, i, k] - centers[b, c, k]
                    s += z * z
                dist = math.sqrt(s)
                if dist < radius:
                    for k in range(d):
                        if dist > 0:
                            u = (out[b, i, k] - centers[b, c, k]) / dist
                        else:
                            u = 1.0 if k == 0 else 0.0
                        out[b, i, k] = centers[b, c, k] + u * radius
    return out


def nb_push_out(pos, centers, radius):
    pos = np.asarray(pos, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    lead = pos.shape[:-2]
    p = np.ascontiguousarray(pos.reshape((-1,) + pos.shape[-2:]))
    c = np.ascontiguousarray(np.broadcast_to(centers, lead + centers.shape[-2:]).reshape((-1,) + centers.shape[-2:]))
    return _nb_push_out(p, c, float(radius)).reshape(pos.shape)


if USE_NUMBA:
    coverage_reward = nb_coverage_reward
    categorical = nb_categorical
    greedy_dedup = nb_greedy_dedup
    push_out = nb_push_out
else:
    coverage_reward = np_coverage_reward
    categorical = np_categorical
    greedy_dedup = np_greedy_dedup
    push_out = np_push_out
