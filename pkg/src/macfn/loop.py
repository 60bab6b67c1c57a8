"""The training loop: sample, store, fit the inverse model, match flows, evaluate.

Artifacts written into ``output_dir``:

- ``config.ini``       resolved configuration snapshot
- ``metrics.csv``      one row per evaluation
- ``diversity.jsonl``  the full diversity report behind each metrics row
- ``checkpoint.npz``   latest healthy checkpoint (never overwritten after divergence)
- ``summary.json``     final status record
"""

import csv
import json
import logging
import math
import os
import time

import numpy as np

from . import config as config_mod
from . import envs, metrics, rng as rngs, sampler, trainer
from .autodiff import AdamState, adam_step
from .errors import DivergedError, UsageError
from .flow_model import FlowModel, InverseModel, save_checkpoint

log = logging.getLogger("macfn")

METRICS_COLUMNS = ("env_steps", "episodes", "fm_loss", "inverse_loss", "mean_test_return_greedy",
                   "mean_test_return_sample", "n_distinct_trajectories")


def default_threshold(spec):
    # trajectories are distinct when they differ by one full move per step on average
    return spec.action_bound


def validity_floor(spec):
    return spec.reward_floor + 0.05


def build_models(cfg, spec=None):
    spec = spec or cfg.env_spec()
    model = FlowModel(spec, hidden=cfg.hidden_dims, rng=rngs.stream(cfg.seed, rngs.INIT, 0))
    inverse = InverseModel(spec, cfg.inverse_mode, hidden=cfg.hidden_dims, rng=rngs.stream(cfg.seed, rngs.INIT, 1))
    flow_opt = AdamState.zeros(len(model.store), lr=cfg.learning_rate)
    inv_opt = AdamState.zeros(len(inverse.store), lr=cfg.inverse_learning_rate)
    return model, inverse, flow_opt, inv_opt


def evaluate(cfg, spec, model, round_index):
    """Greedy and sample test returns plus a diversity report for one eval round."""
    seed = cfg.seed
    greedy, _, _ = metrics.avg_test_return(spec, model, "greedy", cfg.eval_episodes,
                                           rngs.stream(seed, rngs.EVAL, round_index, 0), cfg.k_hat, cfg.temperature)
    sample, _, _ = metrics.avg_test_return(spec, model, "sample", cfg.eval_episodes,
                                           rngs.stream(seed, rngs.EVAL, round_index, 1), cfg.k_hat, cfg.temperature)
    report = None
    if cfg.diversity_trajectories > 0:
        report = collect_diversity(spec, model, cfg.diversity_trajectories,
                                   cfg.diversity_threshold or default_threshold(spec),
                                   rngs.stream(seed, rngs.DIVERSITY, round_index), cfg.k_hat, cfg.temperature)
    return greedy, sample, report


def collect_diversity(spec, model, n, threshold, rng, k_hat=20, temperature=1.0, mode="sample", chunk=2000):
    """Roll out ``n`` episodes on one shared layout and count distinct ones.

    Sharing the layout keeps distances about behaviour rather than about
    where the landmarks happened to spawn.
    """
    layout = envs.reset(spec, rng)
    parts = []
    for lo in range(0, n, chunk):
        parts.append(sampler.rollout_batch(spec, model, mode, rng, min(chunk, n - lo), k_hat, temperature,
                                           layout=layout))
    trajs = sampler.Trajectory(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                                 ("agents", "targets", "obstacles", "obs", "actions", "rewards")))
    return metrics.count_distinct(trajs, threshold, validity_floor(spec))


def _prepare_dir(path):
    if os.path.isdir(path) and os.listdir(path):
        raise UsageError(f"output_dir {path} is not empty; refusing to overwrite a previous run")
    os.makedirs(path, exist_ok=True)


def train_loop(cfg, on_row=None):
    """Run training per ``cfg``; returns the summary dict.

    Raises DivergedError (after writing the summary) when the loss or an
    update goes non-finite; ``checkpoint.npz`` then holds the last healthy
    parameters.
    """
    t_start = time.time()
    spec = cfg.env_spec()
    out = cfg.output_dir
    _prepare_dir(out)
    config_mod.dump(cfg, os.path.join(out, "config.ini"))
    model, inverse, flow_opt, inv_opt = build_models(cfg, spec)
    buffer = trainer.ReplayBuffer(cfg.buffer_capacity)
    ckpt_path = os.path.join(out, "checkpoint.npz")

    env_steps = episodes = updates = 0
    fm_hist, inv_hist = [], []
    status, error = "ok", None

    def checkpoint():
        save_checkpoint(ckpt_path, model, inverse, flow_opt, inv_opt, None, updates,
                        {"env_steps": env_steps, "episodes": episodes, "seed": cfg.seed})

    checkpoint()
    next_eval = cfg.eval_every
    round_index = 0
    last_row = None
    with open(os.path.join(out, "metrics.csv"), "w", newline="", encoding="utf-8") as fh, \
            open(os.path.join(out, "diversity.jsonl"), "w", encoding="utf-8") as dfh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        fh.flush()
        try:
            while env_steps < cfg.total_env_steps:
                tr = sampler.rollout(spec, model, "sample", rngs.stream(cfg.seed, rngs.ROLLOUT, episodes),
                                     cfg.k_hat, cfg.temperature)
                buffer.add(tr)
                episodes += 1
                env_steps += spec.horizon
                for _ in range(cfg.updates_per_episode):
                    batch = buffer.sample(cfg.batch_size, rngs.stream(cfg.seed, rngs.BATCH, updates))
                    inv_hist.append(trainer.train_inverse(inverse, inv_opt, batch, cfg.inverse_batch_size,
                                                          rngs.stream(cfg.seed, rngs.INVERSE, updates)))
                    rep, grad = trainer.flow_matching_loss(
                        model, inverse, batch, cfg.epsilon, cfg.k_hat, rngs.stream(cfg.seed, rngs.LOSS, updates),
                        cfg.terminal_outflow_mode, with_grad=True, initial_inflow=cfg.initial_inflow,
                        mask_parents=cfg.mask_parents)
                    backup = model.store.theta.copy()
                    try:
                        adam_step(model.store.theta, grad, flow_opt)
                    except DivergedError:
                        model.store.theta[:] = backup
                        raise
                    fm_hist.append(rep.flow_matching_loss)
                    updates += 1
                if not np.all(np.isfinite(model.store.theta)) or not np.all(np.isfinite(inverse.store.theta)):
                    raise DivergedError("parameters became non-finite")
                if env_steps >= next_eval:
                    while next_eval <= env_steps:
                        next_eval += cfg.eval_every
                    greedy, sample, report = evaluate(cfg, spec, model, round_index)
                    round_index += 1
                    n_distinct = report.n_distinct if report is not None else 0
                    last_row = (env_steps, episodes, _mean(fm_hist), _mean(inv_hist), greedy, sample, n_distinct)
                    writer.writerow(last_row)
                    fh.flush()
                    if report is not None:
                        dfh.write(json.dumps({"env_steps": env_steps, **report.to_dict()}) + "\n")
                    fm_hist, inv_hist = [], []
                    checkpoint()
                    log.info("steps=%d episodes=%d fm_loss=%.4g inverse_loss=%.3g greedy=%.4g sample=%.4g distinct=%d",
                             *last_row)
                    if on_row is not None:
                        on_row(dict(zip(METRICS_COLUMNS, last_row)))
            if cfg.total_env_steps > 0:
                checkpoint()
        except DivergedError as exc:
            status, error = "diverged", str(exc)
            log.error("training diverged at env step %d: %s", env_steps, exc)
    summary = {
        "status": status,
        "error": error,
        "env_steps": env_steps,
        "episodes": episodes,
        "updates": updates,
        "last_metrics": None if last_row is None else dict(zip(METRICS_COLUMNS, last_row)),
        "wall_seconds": round(time.time() - t_start, 3),
        "checkpoint": "checkpoint.npz",
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
    if status == "diverged":
        raise DivergedError(error)
    return summary


def _mean(xs):
    return float(np.mean(xs)) if xs else math.nan
