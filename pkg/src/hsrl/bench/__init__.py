from .config import ConfigError, ExperimentConfig, config_from_dict, config_hash, load_config
from .runner import evaluate, score_gtb_csv, train_run

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "config_from_dict",
    "config_hash",
    "evaluate",
    "load_config",
    "score_gtb_csv",
    "train_run",
]
