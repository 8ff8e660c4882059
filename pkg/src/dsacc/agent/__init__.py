"""Discrete SAC learner with optional mean / variance constraints on the actor."""

from .buffer import Batch, ReplayBuffer, Transition
from .config import AgentConfig, Aggregation, TargetSource, Variant
from .losses import (
    TemperatureState,
    actor_loss,
    critic_loss,
    critic_targets,
    entropy,
    soft_state_value,
    temperature_objective,
    temperature_update,
)
from .trainer import METRIC_FIELDS, Agent, EvalResult, TrainResult, evaluate, load_actor, train

__all__ = [
    "Batch", "ReplayBuffer", "Transition", "AgentConfig", "Aggregation", "TargetSource", "Variant",
    "TemperatureState", "actor_loss", "critic_loss", "critic_targets", "entropy",
    "soft_state_value", "temperature_objective", "temperature_update", "METRIC_FIELDS", "Agent",
    "EvalResult", "TrainResult", "evaluate", "load_actor", "train",
]
