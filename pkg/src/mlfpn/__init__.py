"""Forward-pass engine for multi-level feature pyramids and an SSD-style single-shot detection pipeline."""

__version__ = "0.1.0"

from mlfpn.config import BackboneConfig, MlfpnConfig, NetworkConfig, load_config
from mlfpn.errors import ConfigError, ConsistencyError, FormatError, MlfpnError, ShapeError
from mlfpn.model import Model, build_model

__all__ = [
    "BackboneConfig",
    "ConfigError",
    "ConsistencyError",
    "FormatError",
    "MlfpnConfig",
    "MlfpnError",
    "Model",
    "NetworkConfig",
    "ShapeError",
    "build_model",
    "load_config",
]
