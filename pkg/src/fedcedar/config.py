"""Experiment configuration: defaults, JSON loading, strict validation.

An empty config document runs the reference setup: 100 clients, 30% active
per round, 100 rounds, 5 clusters, propagation depth 2, local SGD with lr
0.01 for 5 epochs at batch size 16, on the shard-2 synthetic task. Unknown
keys are rejected everywhere so typos fail loudly instead of silently running
defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .model import TrainConfig

ALGORITHMS = ("fedcedar", "fedavg", "as1", "as2", "as3")
PARTITIONS = ("iid", "shards", "topology")
FEDAVG_WEIGHTINGS = ("datasize", "uniform")
SIMILARITY_SPACES = ("output_bias", "full")


class ConfigError(ValueError):
    """Malformed or invalid experiment configuration."""


@dataclass(frozen=True)
class DataConfig:
    """Which pool to build and how to slice it into clients."""

    partition: str = "shards"
    shard: int = 2
    class_count: int = 10
    input_dim: int = 32
    examples_per_class: int = 1250
    noise_sigma: float = 1.0
    mean_scale: float = 3.0
    topology: int | str | None = None
    clients_per_node: int = 20
    idx_images: str | None = None
    idx_labels: str | None = None

    def __post_init__(self) -> None:
        if self.partition not in PARTITIONS:
            raise ConfigError(f"data.partition must be one of {PARTITIONS}: {self.partition!r}")
        if self.shard < 1:
            raise ConfigError(f"data.shard must be >= 1: {self.shard}")
        if (self.idx_images is None) != (self.idx_labels is None):
            raise ConfigError("data.idx_images and data.idx_labels must be set together")
        if self.partition == "topology" and self.topology is None:
            raise ConfigError("data.topology is required when data.partition is 'topology'")


@dataclass(frozen=True)
class PeriodicActivation:
    """Case-study sampling schedule: every `period`-th round covers all nodes."""

    period: int = 5
    track_rand_index: bool = True

    def __post_init__(self) -> None:
        if self.period < 1:
            raise ConfigError(f"periodic_activation.period must be >= 1: {self.period}")


@dataclass(frozen=True)
class ExperimentConfig:
    client_count: int = 100
    active_ratio: float = 0.3
    rounds: int = 100
    cluster_count: int = 5
    propagation_depth: int = 2
    algorithm: str = "fedcedar"
    master_seed: int = 0
    hidden_sizes: tuple[int, ...] = (64,)
    init_scale: float = 1.0
    similarity_space: str = "output_bias"
    fedavg_weighting: str = "datasize"
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    periodic_activation: PeriodicActivation | None = None

    def __post_init__(self) -> None:
        if self.client_count < 1:
            raise ConfigError(f"client_count must be positive: {self.client_count}")
        if not 0.0 < self.active_ratio <= 1.0:
            raise ConfigError(f"active_ratio must be in (0, 1]: {self.active_ratio}")
        if self.rounds < 0:
            raise ConfigError(f"rounds must be non-negative: {self.rounds}")
        if self.cluster_count < 1:
            raise ConfigError(f"cluster_count must be >= 1: {self.cluster_count}")
        if self.propagation_depth < 0:
            raise ConfigError(
                f"propagation_depth must be non-negative: {self.propagation_depth}"
            )
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}: {self.algorithm!r}")
        if self.fedavg_weighting not in FEDAVG_WEIGHTINGS:
            raise ConfigError(
                f"fedavg_weighting must be one of {FEDAVG_WEIGHTINGS}: "
                f"{self.fedavg_weighting!r}"
            )
        if any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"hidden_sizes must be positive: {self.hidden_sizes}")
        if self.init_scale <= 0:
            raise ConfigError(f"init_scale must be positive: {self.init_scale}")
        if self.similarity_space not in SIMILARITY_SPACES:
            raise ConfigError(
                f"similarity_space must be one of {SIMILARITY_SPACES}: "
                f"{self.similarity_space!r}"
            )
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))

    @property
    def active_count(self) -> int:
        """B = round(N * gamma), at least 1."""
        return max(1, int(round(self.client_count * self.active_ratio)))


def _build(cls: type, section: str, doc: Mapping[str, Any], **overrides: Any) -> Any:
    known = {f.name for f in fields(cls)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(
            f"unknown key(s) {sorted(unknown)} in {section}; known keys: {sorted(known)}"
        )
    kwargs = dict(doc)
    kwargs.update(overrides)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"invalid {section}: {exc}") from exc


def config_from_mapping(doc: Mapping[str, Any]) -> ExperimentConfig:
    """Build a validated ExperimentConfig from a parsed JSON mapping."""
    doc = dict(doc)
    overrides: dict[str, Any] = {}
    if "train" in doc:
        overrides["train"] = _build(TrainConfig, "train", doc.pop("train"))
    if "data" in doc:
        overrides["data"] = _build(DataConfig, "data", doc.pop("data"))
    if "periodic_activation" in doc:
        section = doc.pop("periodic_activation")
        if section is not None:
            overrides["periodic_activation"] = _build(
                PeriodicActivation, "periodic_activation", section
            )
    if "hidden_sizes" in doc:
        doc["hidden_sizes"] = tuple(doc["hidden_sizes"])
    return _build(ExperimentConfig, "experiment config", doc, **overrides)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a JSON config document; unspecified fields take the defaults."""
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path} must contain a JSON object at the top level")
    return config_from_mapping(doc)


def config_echo(config: ExperimentConfig) -> dict[str, Any]:
    """JSON-serializable provenance snapshot of a config."""
    from dataclasses import asdict

    echo = asdict(config)
    echo["hidden_sizes"] = list(config.hidden_sizes)
    return echo
