import csv
import json
import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from macfn import cli, config, loop
from macfn.config import RunConfig
from macfn.errors import ConfigError, UsageError
from macfn.flow_model import load_checkpoint, save_checkpoint

SMALL = ["scenario=bimodal_toy", "total_env_steps=80", "eval_every=40", "eval_episodes=5",
         "diversity_trajectories=20", "hidden=8", "k_hat=4", "inverse_batch_size=16"]


def small_cfg(tmp_path, name="run", **kw):
    return config.parse("", SMALL + [f"output_dir={tmp_path / name}"]).replace(**kw)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-9, 1e3, allow_subnormal=False), st.integers(1, 10**6), st.integers(0, 2**31),
       st.sampled_from(["food_collection", "robot_navigation", "predator_prey"]), st.booleans(),
       st.one_of(st.none(), st.floats(0.01, 0.5)))
def test_config_round_trip(lr, steps, seed, scenario, mask, thr):
    cfg = RunConfig(scenario=scenario, learning_rate=lr, total_env_steps=steps, seed=seed,
                    mask_parents=mask, diversity_threshold=thr, hidden="32,16")
    back = config.parse(config.serialize(cfg))
    assert back == cfg
    assert config.serialize(back) == config.serialize(cfg)


def test_unknown_and_bad_fields_name_the_field():
    with pytest.raises(ConfigError) as e:
        config.parse("[train]\nlearning_rat = 0.1\n")
    assert e.value.field == "learning_rat"
    with pytest.raises(ConfigError) as e:
        config.parse("[train]\nk_hat = 0\n")
    assert e.value.field == "k_hat"
    with pytest.raises(ConfigError) as e:
        config.parse("[env]\nk_hat = 3\n")
    assert e.value.field == "k_hat"
    with pytest.raises(ConfigError) as e:
        config.parse("", ["inverse_mode=magic"])
    assert e.value.field == "inverse_mode"
    with pytest.raises(ConfigError):
        config.parse("", ["hidden=8,,4"])
    with pytest.raises(ConfigError):
        config.parse("", ["mask_parents=maybe"])


def test_scenario_defaults_resolve():
    cfg = config.parse("[env]\nscenario = bimodal_toy\n")
    spec = cfg.env_spec()
    assert spec.n_agents == 2 and spec.pos_dim == 1 and spec.horizon == 4
    with pytest.raises(ConfigError):
        config.parse("", ["scenario=bimodal_toy", "n_agents=3"])


def test_zero_steps_header_and_checkpoint(tmp_path):
    cfg = small_cfg(tmp_path, total_env_steps=0)
    summary = loop.train_loop(cfg)
    out = tmp_path / "run"
    assert (out / "metrics.csv").read_text().strip() == ",".join(loop.METRICS_COLUMNS)
    ck = load_checkpoint(out / "checkpoint.npz")
    assert ck["train_step"] == 0 and summary["env_steps"] == 0
    assert config.load(out / "config.ini") == cfg


def test_determinism_byte_identical(tmp_path):
    a = small_cfg(tmp_path, "a")
    b = small_cfg(tmp_path, "b")
    loop.train_loop(a)
    loop.train_loop(b)
    ta = (tmp_path / "a" / "metrics.csv").read_bytes()
    assert ta == (tmp_path / "b" / "metrics.csv").read_bytes()
    rows = list(csv.DictReader(ta.decode().splitlines()))
    assert [int(r["env_steps"]) for r in rows] == [40, 80]
    ka, kb = load_checkpoint(tmp_path / "a" / "checkpoint.npz"), load_checkpoint(tmp_path / "b" / "checkpoint.npz")
    assert np.array_equal(ka["model"].store.theta, kb["model"].store.theta)
    c = small_cfg(tmp_path, "c", seed=1)
    loop.train_loop(c)
    assert (tmp_path / "c" / "metrics.csv").read_bytes() != ta


def test_output_dir_must_be_empty(tmp_path):
    cfg = small_cfg(tmp_path, total_env_steps=0)
    loop.train_loop(cfg)
    with pytest.raises(UsageError):
        loop.train_loop(cfg)


def test_checkpoint_round_trip_resumes_same_outputs(tmp_path):
    cfg = small_cfg(tmp_path)
    loop.train_loop(cfg)
    ck = load_checkpoint(tmp_path / "run" / "checkpoint.npz")
    model = ck["model"]
    spec = model.spec
    obs = np.random.default_rng(0).uniform(-1, 1, (5, spec.obs_dim))
    acts = np.random.default_rng(1).uniform(-spec.action_bound, spec.action_bound, (5, spec.pos_dim))
    path2 = tmp_path / "again.npz"
    save_checkpoint(path2, model, ck["inverse"], ck["flow_opt"], ck["inv_opt"], None, ck["train_step"], ck["extra"])
    ck2 = load_checkpoint(path2)
    assert np.array_equal(ck2["model"].store.theta, model.store.theta)
    assert np.array_equal(ck2["model"].log_flows(0, obs, acts), model.log_flows(0, obs, acts))


def run_cli(capsys, *argv):
    rc = cli.main(list(argv))
    out, err = capsys.readouterr()
    return rc, [json.loads(line) for line in out.splitlines() if line.strip()], err


def test_cli_train_eval_diversity(tmp_path, capsys):
    args = ["train"] + sum((["--set", s] for s in SMALL + [f"output_dir={tmp_path / 'cli'}"]), [])
    rc, out, _ = run_cli(capsys, *args)
    assert rc == 0 and out[-1]["status"] == "ok"
    ck = str(tmp_path / "cli" / "checkpoint.npz")
    rc, out, _ = run_cli(capsys, "eval", ck, "--mode", "sample", "--episodes", "7")
    assert rc == 0 and len(out[0]["terminal_rewards"]) == 7
    rc, out, _ = run_cli(capsys, "diversity", ck, "--n-trajectories", "1")
    assert rc == 0 and out[0]["n_distinct"] <= 1
    # a threshold as large as the arena diameter leaves at most one distinct path
    rc, out, _ = run_cli(capsys, "diversity", ck, "--n-trajectories", "50", "--threshold", "2.0")
    assert rc == 0 and out[0]["n_distinct"] <= 1


def test_cli_error_exit_codes(tmp_path, capsys):
    rc, _, err = run_cli(capsys, "train", "--set", "learning_rat=1")
    assert rc == 2 and "learning_rat" in err
    rc, _, _ = run_cli(capsys, "eval", str(tmp_path / "missing.npz"))
    assert rc == 2
    bad = tmp_path / "bad.npz"
    np.savez(bad, meta=np.array(json.dumps({"format": "macfn-checkpoint", "version": 999})))
    rc, _, _ = run_cli(capsys, "eval", str(bad))
    assert rc == 4
    with pytest.raises(SystemExit):
        cli.main(["eval", str(bad), "--episodes", "0"])


def test_cli_oracle(capsys):
    rc, out, _ = run_cli(capsys, "oracle", "--suite", "constant")
    assert rc == 0 and out[-1]["failed"] == 0
    rc, out, _ = run_cli(capsys, "oracle", "--suite", "concentration", "--trials", "2000", "--k", "100",
                         "--delta", "3", "--n-agents", "1", "--lipschitz-scale", "0.05")
    assert rc == 5 and out[-1]["failed"] >= 1


def test_default_threshold_and_floor():
    spec = RunConfig().env_spec()
    assert loop.default_threshold(spec) == spec.action_bound
    assert loop.validity_floor(spec) > spec.reward_floor
    assert os.path.basename(RunConfig().output_dir) == "default"

