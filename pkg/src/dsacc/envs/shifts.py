"""Test-time observation corruptions (low-dimensional stand-ins for snow/rain/fog)."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ..errors import UsageError
from .tabular import StepResult

STREAK_PERIOD = 3


class ShiftKind(enum.Enum):
    SPECKLE = "speckle"
    STREAK = "streak"
    BLUR = "blur"


@dataclass(frozen=True)
class ShiftSpec:
    kind: ShiftKind
    magnitude: float
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "kind", ShiftKind(self.kind))
        if not np.isfinite(self.magnitude) or self.magnitude < 0:
            raise UsageError(f"shift magnitude must be finite and >= 0, got {self.magnitude}")

    def __str__(self):
        return f"{self.kind.value}:{self.magnitude:g}:seed={self.seed}"


def apply_shift(obs, spec: ShiftSpec, rng=None, high: float = 1.0) -> np.ndarray:
    """Corrupt one observation vector.

    Args:
        obs: finite 1-d observation.
        spec: corruption kind and strength.
        rng: generator for the random parts; a fresh one seeded from
            ``spec.seed`` when omitted.
        high: value written by speckle (the top of the observation range).

    Speckle overwrites ``round(magnitude * d)`` random coordinates with
    ``high``. Streak adds ``magnitude`` to every third coordinate starting at a
    random offset. Blur mixes each coordinate with the mean of itself and its
    immediate neighbours using weight ``magnitude``.
    """
    x = np.asarray(obs, dtype=np.float64)
    if x.ndim != 1 or not np.all(np.isfinite(x)):
        raise UsageError("obs must be a finite 1-d vector")
    m = spec.magnitude
    if m == 0:
        return x.copy()
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    d = x.size
    if spec.kind is ShiftKind.SPECKLE:
        count = min(d, int(round(m * d)))
        out = x.copy()
        out[rng.choice(d, size=count, replace=False)] = high
        return out
    if spec.kind is ShiftKind.STREAK:
        offset = int(rng.integers(STREAK_PERIOD))
        out = x.copy()
        out[offset::STREAK_PERIOD] += m
        return out
    padded = np.concatenate(([0.0], x, [0.0]))
    counts = np.full(d, 3.0)
    counts[0] -= 1
    counts[-1] -= 1
    if d == 1:
        counts[:] = 1.0
    local = (padded[:-2] + padded[1:-1] + padded[2:]) / counts
    return (1.0 - m) * x + m * local


def parse_shift(text: str | None) -> ShiftSpec | None:
    """Parse ``"kind:magnitude[:seed=N]"``; ``None``/``"none"`` mean no shift."""
    if text is None or text.strip().lower() in ("", "none"):
        return None
    parts = text.strip().split(":")
    if len(parts) < 2:
        raise UsageError(f"shift spec {text!r} must look like kind:magnitude[:seed=N]")
    try:
        kind = ShiftKind(parts[0].lower())
        magnitude = float(parts[1])
    except ValueError as exc:
        raise UsageError(f"bad shift spec {text!r}: {exc}") from None
    seed = 0
    for extra in parts[2:]:
        key, _, value = extra.partition("=")
        if key != "seed" or not value:
            raise UsageError(f"unknown shift option {extra!r}")
        seed = int(value)
    return ShiftSpec(kind, magnitude, seed)


class ShiftedEnv:
    """Wraps an env and corrupts only the observations it emits.

    The underlying state, rewards and termination flags pass through
    untouched. The wrapper owns its own generator so the base env's
    randomness is identical with or without the shift.
    """

    def __init__(self, env, spec: ShiftSpec):
        self.env = env
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.high = getattr(env, "obs_high", 1.0)

    def __getattr__(self, name):
        return getattr(self.env, name)

    def _shift(self, obs):
        return apply_shift(obs, self.spec, self.rng, self.high)

    def reset(self, seed=None):
        if seed is not None:
            self.rng = np.random.default_rng([self.spec.seed, seed])
        return self._shift(self.env.reset(seed))

    def step(self, action) -> StepResult:
        res = self.env.step(action)
        return res._replace(obs=self._shift(res.obs))
