"""Command-line entry point: ``macfn {train,eval,diversity,oracle}``.

Exit codes: 0 success, 1 unexpected package error, 2 configuration or usage
error, 3 divergence, 4 checkpoint version mismatch, 5 oracle check failure.
Set ``MACFN_VERBOSITY`` to 0 (errors only), 1 (progress, default) or 2
(debug) to control logging on stderr.
"""

import argparse
import json
import logging
import math
import os
import sys

import numpy as np

from . import config as config_mod
from . import loop, mc_oracle, metrics, rng as rngs
from .errors import MacfnError, OracleError
from .flow_model import load_checkpoint

log = logging.getLogger("macfn")


def _setup_logging():
    raw = os.environ.get("MACFN_VERBOSITY", "1")
    try:
        level = int(raw)
    except ValueError:
        level = 1
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(message)s",
                        level={0: logging.ERROR, 1: logging.INFO}.get(level, logging.DEBUG if level > 1 else logging.ERROR))


def _emit(record):
    print(json.dumps(record, default=_jsonable, allow_nan=True))


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def cmd_train(args):
    cfg = config_mod.load(args.config, args.set) if args.config else config_mod.parse("", args.set)
    summary = loop.train_loop(cfg)
    _emit({"output_dir": cfg.output_dir, **summary})
    return 0


def cmd_eval(args):
    ck = load_checkpoint(args.checkpoint)
    model = ck["model"]
    mean, std, rewards = metrics.avg_test_return(model.spec, model, args.mode, args.episodes,
                                                 rngs.stream(args.seed, rngs.EVAL), args.k_hat, args.temperature)
    _emit({"mode": args.mode, "episodes": args.episodes, "mean_return": mean, "std_return": std,
           "terminal_rewards": rewards})
    return 0


def cmd_diversity(args):
    ck = load_checkpoint(args.checkpoint)
    model = ck["model"]
    threshold = args.threshold if args.threshold is not None else loop.default_threshold(model.spec)
    report = loop.collect_diversity(model.spec, model, args.n_trajectories, threshold,
                                    rngs.stream(args.seed, rngs.DIVERSITY), args.k_hat, args.temperature, args.mode)
    _emit({"mode": args.mode, **report.to_dict()})
    return 0


def cmd_oracle(args):
    rows = mc_oracle.run_suite(args.suite, rngs.stream(args.seed, rngs.ORACLE), n_trials=args.trials,
                               ks=tuple(args.k), deltas=tuple(args.delta), ns=tuple(args.n_agents),
                               lipschitz_scale=args.lipschitz_scale, n_rep=args.replicates)
    for row in rows:
        _emit(row)
    failed = [r for r in rows if not r["passed"]]
    _emit({"suite": args.suite, "checks": len(rows), "failed": len(failed)})
    if failed:
        raise OracleError(f"{len(failed)} of {len(rows)} oracle checks failed")
    return 0


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _positive_float(text):
    v = float(text)
    if not v > 0 or math.isinf(v):
        raise argparse.ArgumentTypeError("must be a finite number > 0")
    return v


def build_parser():
    p = argparse.ArgumentParser(prog="macfn", description="Multi-agent continuous flow networks.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("config", nargs="?", help="INI config; defaults apply when omitted")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config field")
    t.set_defaults(func=cmd_train)

    def policy_args(sp):
        sp.add_argument("checkpoint")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--k-hat", type=_positive_int, default=20)
        sp.add_argument("--temperature", type=_positive_float, default=1.0)

    e = sub.add_parser("eval", help="average test return of a checkpoint")
    policy_args(e)
    e.add_argument("--mode", choices=("greedy", "sample", "random"), default="greedy")
    e.add_argument("--episodes", type=_positive_int, default=100)
    e.set_defaults(func=cmd_eval)

    d = sub.add_parser("diversity", help="distinct-trajectory count of a checkpoint")
    policy_args(d)
    d.add_argument("--mode", choices=("greedy", "sample", "random"), default="sample")
    d.add_argument("--n-trajectories", type=_positive_int, default=10_000)
    d.add_argument("--threshold", type=_positive_float, default=None)
    d.set_defaults(func=cmd_diversity)

    o = sub.add_parser("oracle", help="Monte-Carlo estimator checks against quadrature")
    o.add_argument("--suite", choices=("constant", "unbiased", "concentration", "inverse", "all"), default="all")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--trials", type=_positive_int, default=10_000)
    o.add_argument("--replicates", type=_positive_int, default=1000)
    o.add_argument("--k", type=_positive_int, nargs="+", default=[100, 1000])
    o.add_argument("--delta", type=_positive_float, nargs="+", default=[1.0, 2.0, 3.0])
    o.add_argument("--n-agents", type=_positive_int, nargs="+", default=[1, 2])
    o.add_argument("--lipschitz-scale", type=_positive_float, default=1.0,
                   help="multiply the analytic Lipschitz constant (values well below 1 break the bound)")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MacfnError as exc:
        field = getattr(exc, "field", None)
        where = f" [field: {field}]" if field else ""
        print(f"macfn {args.command}: {type(exc).__name__}: {exc}{where}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"macfn {args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
