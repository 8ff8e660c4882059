"""Toy discrete environments, tabular oracles and observation shifts."""

from ..errors import UsageError
from .builtin import ChainMDP, GridWorld, NoisyBandit, bandit_mdp, chain_mdp, grid_mdp
from .shifts import ShiftedEnv, ShiftKind, ShiftSpec, apply_shift, parse_shift
from .tabular import (
    EnvDescription,
    StepResult,
    TabularEnv,
    TabularMDP,
    bellman_backup,
    expected_episode_return,
    soft_value_iteration,
)

_BUILDERS = {"chain": ChainMDP, "grid": GridWorld, "bandit": NoisyBandit}
_INT_KEYS = {"n", "k", "w", "h", "width", "height", "horizon"}
_ALIASES = {"w": "width", "h": "height"}


def _value(key, text):
    if key in _INT_KEYS:
        return int(text)
    try:
        return float(text)
    except ValueError:
        return text


def parse_env(text: str) -> tuple[str, dict]:
    """Split ``"chain:n=10,slip=0.1"`` into ``("chain", {"n": 10, "slip": 0.1})``."""
    name, _, rest = text.strip().partition(":")
    name = name.lower()
    if name not in _BUILDERS:
        raise UsageError(f"unknown environment {name!r}; expected one of {sorted(_BUILDERS)}")
    kwargs = {}
    for item in filter(None, (s.strip() for s in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq:
            raise UsageError(f"environment option {item!r} must be key=value")
        key = _ALIASES.get(key, key)
        kwargs[key] = _value(key, value)
    return name, kwargs


def make_env(text: str, seed=None, shift: ShiftSpec | None = None):
    """Build an environment from its string identifier, optionally shifted."""
    name, kwargs = parse_env(text)
    try:
        env = _BUILDERS[name](seed=seed, **kwargs)
    except TypeError as exc:
        raise UsageError(f"bad options for {name!r}: {exc}") from None
    return ShiftedEnv(env, shift) if shift is not None else env


__all__ = [
    "ChainMDP", "GridWorld", "NoisyBandit", "bandit_mdp", "chain_mdp", "grid_mdp",
    "ShiftedEnv", "ShiftKind", "ShiftSpec", "apply_shift", "parse_shift",
    "EnvDescription", "StepResult", "TabularEnv", "TabularMDP", "bellman_backup",
    "expected_episode_return", "soft_value_iteration", "parse_env", "make_env",
]
