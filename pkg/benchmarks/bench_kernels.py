"""Time the numba kernels against their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 5]

Each kernel is warmed up once (so numba compile time is excluded), checked
for agreement with the numpy path, then timed with ``timeit``.
"""

import argparse
import timeit

import numpy as np

from macfn import kernels


def cases(rng):
    agents = rng.uniform(-3, 3, (4000, 3, 2))
    food = rng.uniform(-3, 3, (4000, 3, 2))
    logits = rng.normal(size=(20_000, 20))
    u = rng.random(20_000)
    paths = rng.uniform(-3, 3, (600, 26, 3, 2))
    valid = np.ones(600, dtype=bool)
    pos = rng.uniform(-3, 3, (4000, 3, 2))
    centers = rng.uniform(-3, 3, (4000, 2, 2))
    return {
        "coverage_reward": ((agents, food, 1e-3), np.allclose),
        "categorical": ((logits, u, 1.0), np.array_equal),
        "greedy_dedup": ((paths, valid, 0.3), np.array_equal),
        "push_out": ((pos, centers, 0.5), np.allclose),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba not installed; nothing to compare")
        return 0
    print(f"{'kernel':<16}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (inputs, same) in cases(np.random.default_rng(args.seed)).items():
        f_np = getattr(kernels, "np_" + name)
        f_nb = getattr(kernels, "nb_" + name)
        if not same(f_np(*inputs), f_nb(*inputs)):
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_np = min(timeit.repeat(lambda: f_np(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_np:>10.2f}{t_nb:>10.2f}{t_np / t_nb:>8.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
