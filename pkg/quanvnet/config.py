#!/usr/bin/env python3
"""Experiment configuration files.

An experiment is described by one key=value file (``#`` comments allowed),
parsed with python-dotenv. Command-line flags may override single keys.
``experiment.env.template`` documents every key with the comment lines above
it.
"""

import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values

from quanvnet.errors import ConfigError, QuanvError
from quanvnet.nn import TrainConfig
from quanvnet.qaoa import DEFAULT_TOPOLOGY, TOPOLOGY_DIR, DeviceTopology, bundled_topology, read_topology
from quanvnet.quanv import Decoder, FilterMode, QuanvFilter, make_filter_bank

logger = logging.getLogger(__name__)

DEFAULT_TEMPLATE = "experiment.env.template"
MAX_LAYERS = 4
MODEL_KINDS = ("cnn", "qnn")


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: str = "cnn"
    filters: int = 5
    p: int = 1
    shots: int = 1000
    mode: str = FilterMode.EXACT.value
    decoder: str = Decoder.AGREEMENT.value
    budget: Optional[int] = None
    topology: str = DEFAULT_TOPOLOGY
    group_size: int = 4
    window: int = 5
    stride: int = 5
    dataset: Optional[str] = None
    synthetic_per_class: int = 125
    n_train: int = 400
    n_test: int = 100
    split_seed: int = 0
    replicas: int = 1
    seed: int = 0
    filter_seed: int = 1000
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 32
    eval_every: int = 50
    max_steps: Optional[int] = None
    workers: int = 1
    leaf_size: int = 16

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"model_kind must be one of {MODEL_KINDS}, got '{self.model_kind}'")
        if self.mode not in {m.value for m in FilterMode}:
            raise ConfigError(f"mode must be exact or shots, got '{self.mode}'")
        if self.decoder not in {d.value for d in Decoder}:
            raise ConfigError(f"decoder must be ones or agreement, got '{self.decoder}'")
        if not 1 <= self.p <= MAX_LAYERS:
            raise ConfigError(f"p must lie in 1..{MAX_LAYERS}, got {self.p}")
        for key in ("filters", "shots", "group_size", "window", "stride", "synthetic_per_class",
                    "replicas", "epochs", "batch_size", "eval_every", "workers", "leaf_size"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        for key in ("budget", "max_steps"):
            value = getattr(self, key)
            if value is not None and value < 1:
                raise ConfigError(f"{key} must be >= 1 when set, got {value}")
        if self.n_train < 1 or self.n_test < 1:
            raise ConfigError("n_train and n_test must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.dataset is not None and not os.path.exists(self.dataset):
            raise ConfigError(f"dataset file {self.dataset} does not exist")
        self.topology_path()

    @classmethod
    def from_file(cls, path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> "ExperimentConfig":
        """Build a config from a key=value file and flag overrides

        Args:
            path (str, optional): Config file; defaults apply to keys it omits
            overrides (Mapping[str, Any], optional): Values that win over the file; ``None`` entries are ignored

        Returns:
            ExperimentConfig: The validated config
        """
        raw: Dict[str, Any] = {}
        if path is not None:
            if not os.path.exists(path):
                raise ConfigError(f"config file {path} does not exist")
            raw.update(dotenv_values(path))
            if raw.get("dataset"):
                raw["dataset"] = _relative_to(path, raw["dataset"])
        raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(raw) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = {key: _convert(key, value, known[key].default) for key, value in raw.items()}
        return cls(**values)

    def as_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def topology_path(self) -> str:
        """Config value as a file path, or a bundled topology by name"""
        if os.path.isfile(self.topology):
            return self.topology
        bundled = os.path.join(TOPOLOGY_DIR, f"{self.topology}.topo")
        if os.path.isfile(bundled):
            return bundled
        raise ConfigError(f"topology '{self.topology}' is neither a file nor a bundled topology")

    def load_topology(self) -> DeviceTopology:
        path = self.topology_path()
        if os.path.dirname(os.path.abspath(path)) == TOPOLOGY_DIR:
            return bundled_topology(os.path.splitext(os.path.basename(path))[0])
        return read_topology(path)

    def filter_bank(self) -> List[QuanvFilter]:
        return make_filter_bank(
            self.load_topology(), self.filters, self.p, self.shots, self.filter_seed, self.decoder
        )

    def train_config(self, replica: int = 0) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            batch_size=self.batch_size,
            seed=self.seed + replica,
            eval_every=self.eval_every,
            max_steps=self.max_steps,
        )


def _relative_to(config_path: str, target: str) -> str:
    if os.path.isabs(target) or os.path.exists(target):
        return target
    return os.path.join(os.path.dirname(os.path.abspath(config_path)), target)


def _convert(key: str, value: Any, default: Any) -> Any:
    if value is None:
        value = ""
    if not isinstance(value, str):
        return value
    text = value.strip()
    if key in ("budget", "max_steps", "dataset") and text == "":
        return None
    try:
        if key in ("budget", "max_steps") or isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as e:
        raise ConfigError(f"{key}: cannot parse '{value}'") from e
    return text


def load_env(env_path: str) -> Dict[str, str]:
    """Key/value pairs of a config file, empty when the file is absent"""
    if not os.path.exists(env_path):
        return {}
    return {k: v if v is not None else "" for k, v in dotenv_values(env_path).items()}


def save_env(env_vars: Dict[str, str], env_path: str) -> None:
    """Write config values, keeping comments and the position of existing keys"""
    lines = []
    if os.path.exists(env_path):
        with open(env_path, "r") as f:
            lines = f.read().splitlines()

    pending = dict(env_vars)
    content = []
    for line in lines:
        stripped = line.strip()
        if stripped and not stripped.startswith("#") and "=" in stripped:
            key = stripped.split("=", 1)[0].strip()
            if key in pending:
                content.append(f"{key}={pending.pop(key)}")
                continue
            if key not in env_vars:
                continue
        content.append(line)
    for key, value in sorted(pending.items()):
        content.append(f"{key}={value}")

    try:
        with open(env_path, "w") as f:
            f.write("\n".join(content) + "\n")
    except OSError as e:
        logger.error(f"Error writing config {env_path}: {e}")
        raise


def get_template_vars(template_path: str = DEFAULT_TEMPLATE) -> Dict[str, Optional[str]]:
    """Template keys with the comment lines directly above them as description"""
    template_vars: Dict[str, Optional[str]] = {}
    current_comment = []
    with open(template_path, "r") as f:
        for line in f:
            line = line.strip()
            if line.startswith("#"):
                current_comment.append(line[1:].strip())
            elif line and "=" in line:
                key = line.split("=", 1)[0].strip()
                template_vars[key] = " ".join(current_comment) if current_comment else None
                current_comment = []
            else:
                current_comment = []
    return template_vars


def set_value(env_path: str, key: str, value: str) -> ExperimentConfig:
    """Set one key in a config file after checking the result still validates"""
    env_vars = load_env(env_path)
    env_vars[key] = value
    try:
        config = ExperimentConfig.from_mapping(
            {**env_vars, "dataset": _relative_to(env_path, env_vars["dataset"]) if env_vars.get("dataset") else ""}
        )
    except QuanvError:
        logger.error(f"Refusing to write {key}={value} to {env_path}")
        raise
    save_env(env_vars, env_path)
    return config
