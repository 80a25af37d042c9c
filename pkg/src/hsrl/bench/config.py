"""Experiment configuration: YAML loading with field-path errors and a
canonical hash so result rows can be traced to the exact config."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..mgrpo import RewardConfig, TrainConfig
from ..planner import PlannerConfig
from ..search import SearchConfig


class ConfigError(ValueError):
    """Schema violation; the message carries the offending field path."""


@dataclass
class ExperimentConfig:
    task: str = "maze"  # maze | floorplan | blocksworld | gtb
    dataset_dir: str = "data"
    output_dir: str = "runs/out"
    policy_mode: str = "synthetic"  # synthetic | remote
    eval_mode: str = "greedy"  # greedy | sampled
    remote_url: str | None = None
    seeds: list[int] = field(default_factory=lambda: [0])
    probe_size: int = 16
    probe_every: int = 25
    total_iterations: int | None = None
    workers: int = 1
    search: SearchConfig = field(default_factory=SearchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)

    def __post_init__(self):
        if self.task not in ("maze", "floorplan", "blocksworld", "gtb"):
            raise ConfigError(f"task: unknown task {self.task!r}")
        if self.policy_mode not in ("synthetic", "remote"):
            raise ConfigError(f"policy_mode: must be 'synthetic' or 'remote'")
        if self.eval_mode not in ("greedy", "sampled"):
            raise ConfigError(f"eval_mode: must be 'greedy' or 'sampled'")
        if not self.seeds:
            raise ConfigError("seeds: must be non-empty")


_SECTION_TYPES = {
    "search": SearchConfig,
    "train": TrainConfig,
    "reward": RewardConfig,
    "planner": PlannerConfig,
}


def _build_section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    for key in data:
        if key not in known:
            raise ConfigError(f"{path}.{key}: unknown field")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("top level: expected a mapping")
    kwargs = {}
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"{key}: unknown field")
        if key in _SECTION_TYPES:
            kwargs[key] = _build_section(_SECTION_TYPES[key], value or {}, key)
        else:
            kwargs[key] = value
    try:
        return ExperimentConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    return config_from_dict(data)


def canonical_config(cfg: ExperimentConfig) -> str:
    """Key-order-independent serialization used for hashing."""
    return json.dumps(dataclasses.asdict(cfg), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_config(cfg).encode()).hexdigest()[:16]
