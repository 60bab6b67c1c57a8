"""Run configuration: a flat dataclass stored as an INI-style key=value file.

Each field belongs to one section (``env``, ``train``, ``eval``, ``run``).
Floats are written with ``repr`` so that ``parse(serialize(c)) == c``.
Environment fields left at ``None`` fall back to the scenario defaults of
:func:`macfn.envs.make_spec`.
"""

import configparser
import dataclasses
import io
import math
import typing
from dataclasses import dataclass, field
from typing import Optional

from . import envs
from .errors import ConfigError

_NONE = "default"
_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")


def _f(section, default, **kw):
    return field(default=default, metadata={"section": section, **kw})


@dataclass(frozen=True)
class RunConfig:
    # env
    scenario: str = _f("env", "food_collection", choices=envs.SCENARIOS)
    n_agents: Optional[int] = _f("env", None, positive=True)
    horizon: Optional[int] = _f("env", None, positive=True)
    arena_half_width: Optional[float] = _f("env", None, positive=True)
    action_bound: Optional[float] = _f("env", None, positive=True)
    obs_radius: Optional[float] = _f("env", None, positive=True)
    reward_floor: Optional[float] = _f("env", None, positive=True)
    n_obstacles: Optional[int] = _f("env", None)
    toy_center: Optional[float] = _f("env", None)
    toy_width: Optional[float] = _f("env", None, positive=True)
    # train
    total_env_steps: int = _f("train", 1_000_000)
    k_hat: int = _f("train", 20, positive=True)
    epsilon: float = _f("train", 1.0, positive=True)
    temperature: float = _f("train", 1.0, positive=True)
    learning_rate: float = _f("train", 3e-4, positive=True)
    inverse_learning_rate: float = _f("train", 1e-3, positive=True)
    batch_size: int = _f("train", 8, positive=True)
    buffer_capacity: int = _f("train", 2000, positive=True)
    updates_per_episode: int = _f("train", 1, positive=True)
    hidden: str = _f("train", "64,64")
    inverse_mode: str = _f("train", "learned", choices=("learned", "analytic"))
    inverse_batch_size: int = _f("train", 256, positive=True)
    terminal_outflow_mode: str = _f("train", "boundary", choices=("boundary", "literal"))
    initial_inflow: str = _f("train", "sampled", choices=("sampled", "exact"))
    mask_parents: bool = _f("train", False)
    # eval
    eval_every: int = _f("eval", 10_000, positive=True)
    eval_episodes: int = _f("eval", 100, positive=True)
    diversity_trajectories: int = _f("eval", 200)
    diversity_threshold: Optional[float] = _f("eval", None, positive=True)
    # run
    seed: int = _f("run", 0)
    output_dir: str = _f("run", "runs/default")

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.metadata.get("positive") and not v > 0:
                raise ConfigError(f"{f.name} must be > 0, got {v!r}", f.name)
            choices = f.metadata.get("choices")
            if choices and v not in choices:
                raise ConfigError(f"{f.name} must be one of {', '.join(choices)}, got {v!r}", f.name)
        if self.total_env_steps < 0:
            raise ConfigError("total_env_steps must be >= 0", "total_env_steps")
        if self.diversity_trajectories < 0:
            raise ConfigError("diversity_trajectories must be >= 0", "diversity_trajectories")
        try:
            dims = self.hidden_dims
        except ValueError:
            dims = ()
        if not dims or min(dims) < 1:
            raise ConfigError(f"hidden must be comma-separated positive ints, got {self.hidden!r}", "hidden")
        self.env_spec()

    @property
    def hidden_dims(self):
        return tuple(int(x) for x in self.hidden.split(","))

    def env_spec(self):
        overrides = {}
        for f in dataclasses.fields(self):
            if f.metadata["section"] == "env" and f.name not in ("scenario", "n_agents"):
                v = getattr(self, f.name)
                if v is not None:
                    overrides[f.name] = v
        try:
            return envs.make_spec(self.scenario, self.n_agents, **overrides)
        except TypeError as exc:
            raise ConfigError(str(exc), "scenario") from exc

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
SECTIONS = ("env", "train", "eval", "run")


def _base_type(f):
    args = [a for a in typing.get_args(f.type) if a is not type(None)]
    return args[0] if args else f.type


def _format(value):
    if value is None:
        return _NONE
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(name, raw):
    f = _FIELDS.get(name)
    if f is None:
        raise ConfigError(f"unknown config field {name!r}", name)
    raw = raw.strip()
    if raw == _NONE and f.default is None:
        return None
    typ = _base_type(f)
    if typ is bool:
        low = raw.lower()
        if low in _TRUE or low in _FALSE:
            return low in _TRUE
        raise ConfigError(f"field {name!r}: expected true or false, got {raw!r}", name)
    try:
        if typ is int:
            return int(raw.replace("_", ""))
        if typ is float:
            v = float(raw)
            if math.isnan(v):
                raise ValueError(raw)
            return v
        return raw
    except ValueError:
        raise ConfigError(f"field {name!r}: cannot parse {raw!r} as {typ.__name__}", name) from None


def serialize(cfg):
    out = io.StringIO()
    for section in SECTIONS:
        out.write(f"[{section}]\n")
        for f in dataclasses.fields(cfg):
            if f.metadata["section"] == section:
                out.write(f"{f.name} = {_format(getattr(cfg, f.name))}\n")
        out.write("\n")
    return out.getvalue()


def parse(text, overrides=None):
    """Parse config text; ``overrides`` is a list of ``key=value`` strings."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    for section in cp.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown config section [{section}]", section)
        for key, raw in cp.items(section):
            f = _FIELDS.get(key)
            if f is None:
                raise ConfigError(f"unknown config field {key!r} in [{section}]", key)
            if f.metadata["section"] != section:
                raise ConfigError(f"field {key!r} belongs in [{f.metadata['section']}], not [{section}]", key)
            values[key] = _coerce(key, raw)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value", item)
        key = key.strip().split(".")[-1]
        values[key] = _coerce(key, raw)
    return RunConfig(**values)


def load(path, overrides=None):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse(text, overrides)


def dump(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(cfg))
