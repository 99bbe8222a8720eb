"""Beamforming and max-min fair rate allocation for MISO cognitive radio networks."""

from .mld import mld_power_min, mld_rate_opt
from .mmse import algorithm1_power_min, algorithm2_rate_opt, rate_opt
from .network import (
    BeamformerSet,
    ChannelSet,
    NetworkConfig,
    sample_channels,
)
from .ugd import algorithm3, algorithm4, algorithm4mld, effective_network

__all__ = [
    "BeamformerSet",
    "ChannelSet",
    "NetworkConfig",
    "sample_channels",
    "algorithm1_power_min",
    "algorithm2_rate_opt",
    "rate_opt",
    "mld_power_min",
    "mld_rate_opt",
    "effective_network",
    "algorithm3",
    "algorithm4",
    "algorithm4mld",
]
__version__ = "0.1.0"
