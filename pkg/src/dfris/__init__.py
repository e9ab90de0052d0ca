"""Joint beamforming and dual-functional (reflect + relay) RIS design for MU-MISO sum-rate maximization."""
from .channel import (ChannelSet, LinkModels, PathLossParams, ScenarioGeometry,
                      generate_channels, near_field_channel, path_loss,
                      rayleigh_channel, rician_channel)
from .optimizer import OptimizerConfig, RunResult, run
from .system import NoiseAndGainParams, ReflectionState, sinr_all, sum_rate

__version__ = "0.1.0"

__all__ = [
    "ChannelSet", "LinkModels", "PathLossParams", "ScenarioGeometry", "generate_channels",
    "near_field_channel", "path_loss", "rayleigh_channel", "rician_channel",
    "OptimizerConfig", "RunResult", "run",
    "NoiseAndGainParams", "ReflectionState", "sinr_all", "sum_rate",
]
