"""Compact recurrent networks: dense, low-rank, hashed and Toeplitz-like weight maps
inside RNN and LSTM cells, with a truncated-BPTT trainer and parameter accounting."""

from .config import ConfigError, ExperimentConfig, config_from_dict, parse_config
from .linear_maps import DenseMap, HashedMap, LinearMap, LowRankMap, ToeplitzLikeMap, make_map
from .recurrent_nets import Network, build_network, count_parameters
from .tasks import make_task
from .training import Trainer

__all__ = [
    "ConfigError", "ExperimentConfig", "config_from_dict", "parse_config",
    "LinearMap", "DenseMap", "LowRankMap", "HashedMap", "ToeplitzLikeMap", "make_map",
    "Network", "build_network", "count_parameters", "make_task", "Trainer",
]
