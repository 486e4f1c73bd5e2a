"""Deep Q-learning agents that learn to dodge a scripted fighting-game opponent."""

from .agents import AgentKind, EpsilonSchedule, TrainState, build_network, train_batch
from .arena import AgentAction, ArenaConfig, encode_state, reset, step
from .nncore import Head, LayerSpec, Network, forward, init_network

__version__ = "0.1.0"

__all__ = [
    "AgentAction",
    "AgentKind",
    "ArenaConfig",
    "EpsilonSchedule",
    "Head",
    "LayerSpec",
    "Network",
    "TrainState",
    "build_network",
    "encode_state",
    "forward",
    "init_network",
    "reset",
    "step",
    "train_batch",
]
