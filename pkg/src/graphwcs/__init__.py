"""Graph reinforcement learning for resource allocation in wireless control systems."""

from .gnn import Architecture, param_count_gnn, param_count_nn, regnn_forward
from .policy import Actor, Critic, PolicyHead
from .scenarios import ConfigError, ScenarioConfig, load_config, make_environment
from .trainer import train

__version__ = "0.1.0"

__all__ = [
    "Actor", "Architecture", "ConfigError", "Critic", "PolicyHead", "ScenarioConfig", "load_config",
    "make_environment", "param_count_gnn", "param_count_nn", "regnn_forward", "train",
]
