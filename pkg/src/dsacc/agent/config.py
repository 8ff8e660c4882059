"""Typed agent configuration with a flat ``key = value`` text format."""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import UsageError


class Variant(enum.Enum):
    DSAC = "dsac"
    DSAC_M = "dsac-m"
    DSAC_V = "dsac-v"

    @property
    def label(self) -> str:
        return self.value.upper()


class Aggregation(enum.Enum):
    MIN = "min"
    AVG = "avg"


class TargetSource(enum.Enum):
    ONLINE = "online"
    TARGET = "target"


@dataclass(frozen=True)
class AgentConfig:
    """All hyperparameters of a training run.

    Defaults follow the discrete SAC table of the reference setup (Adam,
    lr 3e-4, batch 64, gamma 0.99, 1e6 buffer, 2x512 ReLU, tau 1.0, entropy
    discount 0.98). Values the source leaves open (target period, warmup,
    gradient steps, initial temperature) are set to conventional choices.
    """

    variant: Variant = Variant.DSAC
    env: str = "chain:n=10,slip=0.1"
    seed: int = 0
    total_steps: int = 50_000
    gamma: float = 0.99
    batch_size: int = 64
    buffer_capacity: int = 1_000_000
    hidden_layers: tuple = (512, 512)
    activation: str = "relu"
    optimizer: str = "adam"
    lr: float = 3e-4
    alpha_lr: float = 3e-4
    initial_alpha: float = 1.0
    entropy_discount: float = 0.98
    tau: float = 1.0
    target_update_period: int = 1000
    gradient_steps: int = 1
    warmup: int = 1000
    aggregation: Aggregation = Aggregation.AVG
    target_source: TargetSource = TargetSource.ONLINE
    eval_interval: int = 2500
    eval_episodes: int = 10
    checkpoint_interval: int = 0

    def __post_init__(self):
        for f in fields(self):
            object.__setattr__(self, f.name, _coerce(f, getattr(self, f.name)))
        self._validate()

    def _validate(self):
        checks = [
            (0.0 <= self.gamma <= 1.0, "gamma must be in [0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.buffer_capacity >= 1, "buffer_capacity must be >= 1"),
            (all(h >= 1 for h in self.hidden_layers), "hidden_layers entries must be >= 1"),
            (self.activation == "relu", "only activation = relu is supported"),
            (self.optimizer == "adam", "only optimizer = adam is supported"),
            (self.lr > 0 and self.alpha_lr > 0, "learning rates must be positive"),
            (self.initial_alpha > 0, "initial_alpha must be positive"),
            (0.0 < self.entropy_discount <= 1.0, "entropy_discount must be in (0, 1]"),
            (0.0 <= self.tau <= 1.0, "tau must be in [0, 1]"),
            (self.target_update_period >= 1, "target_update_period must be >= 1"),
            (self.gradient_steps >= 0, "gradient_steps must be >= 0"),
            (self.warmup >= 0, "warmup must be >= 0"),
            (self.total_steps >= 1, "total_steps must be >= 1"),
            (self.eval_interval >= 1, "eval_interval must be >= 1"),
            (self.eval_episodes >= 1, "eval_episodes must be >= 1"),
            (self.checkpoint_interval >= 0, "checkpoint_interval must be >= 0"),
        ]
        for ok, message in checks:
            if not ok:
                raise UsageError(message)

    def replace(self, **changes) -> "AgentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return {f.name: _plain(getattr(self, f.name)) for f in fields(self)}

    def to_text(self) -> str:
        lines = []
        for key, value in self.to_dict().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_mapping(cls, values: dict) -> "AgentConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        return cls(**values)

    @classmethod
    def from_text(cls, text: str, overrides: dict | None = None) -> "AgentConfig":
        values = parse_config_text(text)
        values.update(overrides or {})
        return cls.from_mapping(values)

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "AgentConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), overrides)


def parse_config_text(text: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment; values stay strings."""
    values = {}
    for number, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq or not key.strip():
            raise UsageError(f"config line {number} is not key = value: {raw!r}")
        key = key.strip()
        if key in values:
            raise UsageError(f"duplicate config key: {key}")
        values[key] = value.strip()
    return values


_TYPES = {
    "Variant": Variant, "Aggregation": Aggregation, "TargetSource": TargetSource,
    "int": int, "float": float, "str": str, "bool": bool, "tuple": tuple,
}


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def _coerce(f, value):
    kind = _TYPES[f.type] if isinstance(f.type, str) else f.type
    try:
        if isinstance(kind, type) and issubclass(kind, enum.Enum):
            return kind(value.lower() if isinstance(value, str) else value)
        if kind is tuple:
            if isinstance(value, str):
                value = [v for v in value.replace("[", "").replace("]", "").split(",") if v.strip()]
            return tuple(int(v) for v in value)
        if kind is bool:
            if isinstance(value, str):
                return value.strip().lower() in ("1", "true", "yes")
            return bool(value)
        if kind is int:
            if isinstance(value, str):
                try:
                    return int(value.replace("_", ""))
                except ValueError:
                    value = float(value)  # allow "1e6"
            number = value
            if isinstance(number, bool) or int(number) != number:
                raise ValueError(f"{value!r} is not an integer")
            return int(number)
        if kind is float:
            return float(value)
        return str(value)
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid value for {f.name}: {exc}") from None
