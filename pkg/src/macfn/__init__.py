"""Multi-agent continuous flow networks.

Per-agent edge-flow networks whose product is trained with a centralised,
Monte-Carlo flow-matching loss on continuous-action particle scenarios.
Decentralised execution samples each agent's action from its own flows.
"""

from .config import RunConfig
from .envs import EnvSpec, make_spec
from .errors import (CheckpointVersionError, ConfigError, DivergedError, MacfnError, OracleError,
                     UsageError)
from .flow_model import FlowModel, InverseModel, load_checkpoint, save_checkpoint
from .loop import train_loop
from .trainer import ReplayBuffer, flow_matching_loss

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "EnvSpec", "make_spec", "FlowModel", "InverseModel", "load_checkpoint", "save_checkpoint",
    "train_loop", "ReplayBuffer", "flow_matching_loss", "MacfnError", "ConfigError", "UsageError",
    "DivergedError", "CheckpointVersionError", "OracleError",
]
