"""Deterministic simulator for trust- and resource-aware federated learning."""

from .config import ExperimentConfig, load_config, validate_config
from .errors import ConfigError, DataError, FedarError, ShapeError, TrustError
from .numcore import Batch, Gradient, ModelParams
from .server import RoundRecord, Simulation, run_experiment

__version__ = "0.1.0"

__all__ = [
    "Batch",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "FedarError",
    "Gradient",
    "ModelParams",
    "RoundRecord",
    "ShapeError",
    "Simulation",
    "TrustError",
    "load_config",
    "run_experiment",
    "validate_config",
    "__version__",
]
