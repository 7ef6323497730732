"""Experiment configuration: defaults, bounds checking, JSON parsing.

A config file is a flat JSON object whose keys mirror the
:class:`ExperimentConfig` fields; an empty file means all defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Mapping

from .federation import AGGREGATORS
from .graph import DEFAULT_TYPE_ALPHABET
from .model import ACTIVATIONS


class ConfigError(Exception):
    pass


@dataclass
class ExperimentConfig:
    clients: int = 3
    rounds: int = 50
    local_epochs: int = 1
    batch_size: int = 256
    learning_rate: float = 0.001
    embedding_dim: int = 128
    preference_dim: int = 16
    metapaths: tuple[str, ...] = ("APA", "APPA")
    adjacency_mode: str = "counts"
    activation: str = "elu"
    neighbor_sample_size: int | None = 16
    aggregator: str = "staleness"
    staleness_exponent: float = 0.5
    gap_threshold: int = 5
    ema_beta: float = 0.9
    speed_multipliers: tuple[int, ...] | None = None
    granularity: str = "round"
    scheduling: str = "deterministic"
    partition_strategy: str = "uniform"
    dirichlet_alpha: float = 1.0
    train_fraction: float = 0.8
    target_type: str = "author"
    type_alphabet: Mapping[str, str] = field(default_factory=lambda: dict(DEFAULT_TYPE_ALPHABET))
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        def require(cond: bool, message: str):
            if not cond:
                raise ConfigError(message)

        require(self.clients >= 1, f"clients must be >= 1, got {self.clients}")
        require(self.rounds >= 0, f"rounds must be >= 0, got {self.rounds}")
        require(self.local_epochs >= 0, f"local_epochs must be >= 0, got {self.local_epochs}")
        require(self.batch_size >= 1, f"batch_size must be >= 1, got {self.batch_size}")
        require(self.learning_rate > 0, f"learning_rate must be > 0, got {self.learning_rate}")
        require(self.embedding_dim >= 1, f"embedding_dim must be >= 1, got {self.embedding_dim}")
        require(self.preference_dim >= 1, f"preference_dim must be >= 1, got {self.preference_dim}")
        require(len(self.metapaths) >= 1, "at least one meta path is required")
        require(
            self.adjacency_mode in ("counts", "binary"),
            f"adjacency_mode must be 'counts' or 'binary', got {self.adjacency_mode!r}",
        )
        require(
            self.activation in ACTIVATIONS,
            f"activation must be one of {sorted(ACTIVATIONS)}, got {self.activation!r}",
        )
        require(
            self.neighbor_sample_size is None or self.neighbor_sample_size >= 1,
            f"neighbor_sample_size must be >= 1 or null, got {self.neighbor_sample_size}",
        )
        require(
            self.aggregator in AGGREGATORS,
            f"aggregator must be one of {AGGREGATORS}, got {self.aggregator!r}",
        )
        require(
            self.staleness_exponent >= 0,
            f"staleness_exponent must be >= 0, got {self.staleness_exponent}",
        )
        require(self.gap_threshold >= 1, f"gap_threshold must be >= 1, got {self.gap_threshold}")
        require(0.0 <= self.ema_beta <= 1.0, f"ema_beta must lie in [0, 1], got {self.ema_beta}")
        if self.speed_multipliers is not None:
            require(
                len(self.speed_multipliers) == self.clients,
                f"speed_multipliers length {len(self.speed_multipliers)} != clients {self.clients}",
            )
            require(
                all(isinstance(s, int) and s >= 1 for s in self.speed_multipliers),
                "speed_multipliers must be positive integers",
            )
        require(
            self.granularity in ("round", "batch"),
            f"granularity must be 'round' or 'batch', got {self.granularity!r}",
        )
        require(
            self.scheduling in ("deterministic", "concurrent"),
            f"scheduling must be 'deterministic' or 'concurrent', got {self.scheduling!r}",
        )
        require(
            self.partition_strategy in ("uniform", "label_skew"),
            f"partition_strategy must be 'uniform' or 'label_skew', got {self.partition_strategy!r}",
        )
        require(self.dirichlet_alpha > 0, f"dirichlet_alpha must be > 0, got {self.dirichlet_alpha}")
        require(
            0.0 < self.train_fraction < 1.0,
            f"train_fraction must lie in (0, 1), got {self.train_fraction}",
        )

    def speeds(self) -> tuple[int, ...]:
        if self.speed_multipliers is None:
            return (1,) * self.clients
        return tuple(self.speed_multipliers)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["metapaths"] = list(self.metapaths)
        out["speed_multipliers"] = (
            None if self.speed_multipliers is None else list(self.speed_multipliers)
        )
        out["type_alphabet"] = dict(self.type_alphabet)
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        kwargs = dict(raw)
        if "metapaths" in kwargs:
            kwargs["metapaths"] = tuple(kwargs["metapaths"])
        if kwargs.get("speed_multipliers") is not None:
            kwargs["speed_multipliers"] = tuple(kwargs["speed_multipliers"])
        try:
            return cls(**kwargs)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def parse_config(path) -> ExperimentConfig:
    """Load and validate a config file; empty or blank files mean defaults."""
    with open(path) as fh:
        text = fh.read()
    if not text.strip():
        return ExperimentConfig()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return ExperimentConfig.from_dict(raw)
