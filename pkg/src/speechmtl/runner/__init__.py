from .config import ConfigError, ExperimentConfig, config_hash, load_config, save_config
from .trainer import TrainingRun

__all__ = [
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "save_config",
    "config_hash",
    "TrainingRun",
]
