"""Built-in toy environments, each backed by an exact TabularMDP."""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from .tabular import TabularEnv, TabularMDP

LEFT, RIGHT = 0, 1


def chain_mdp(n: int = 10, slip: float = 0.1) -> TabularMDP:
    """n-state corridor starting at state 0.

    Action 1 moves right and action 0 moves left; with probability ``slip``
    the move is reversed. Walls clamp at both ends. Every step taken in the
    last state pays 1, everything else pays 0, and there are no terminal
    states (episodes end by truncation).
    """
    if n < 2:
        raise UsageError("chain needs at least 2 states")
    if not 0.0 <= slip <= 1.0:
        raise UsageError("slip must be in [0, 1]")
    T = np.zeros((n, 2, n))
    for s in range(n):
        left, right = max(s - 1, 0), min(s + 1, n - 1)
        T[s, RIGHT, right] += 1.0 - slip
        T[s, RIGHT, left] += slip
        T[s, LEFT, left] += 1.0 - slip
        T[s, LEFT, right] += slip
    R = np.zeros((n, 2))
    R[n - 1, :] = 1.0
    return TabularMDP(T, R)


def ChainMDP(n: int = 10, slip: float = 0.1, horizon: int | None = None, seed=None) -> TabularEnv:
    horizon = 5 * n if horizon is None else int(horizon)
    return TabularEnv(chain_mdp(n, slip), horizon, name=f"chain:n={n},slip={slip:g}", seed=seed)


MOVES = ((0, -1), (0, 1), (-1, 0), (1, 0))  # up, down, left, right as (dx, dy)


def grid_mdp(width: int = 4, height: int = 4, goal=None, pit=None, step_reward: float = -0.01):
    """Grid with a +1 goal cell and a -1 pit cell, both terminal; start at (0, 0)."""
    if width < 2 or height < 1:
        raise UsageError("grid must be at least 2x1")
    S = width * height
    goal = (width - 1, height - 1) if goal is None else tuple(goal)
    pit = (width - 1, 0) if pit is None else tuple(pit)
    if goal == (0, 0) or pit == (0, 0) or goal == pit:
        raise UsageError("goal, pit and start must be distinct cells")

    def idx(x, y):
        return y * width + x

    T = np.zeros((S, 4, S))
    R = np.full((S, 4), step_reward)
    terminal = np.zeros(S, bool)
    terminal[idx(*goal)] = terminal[idx(*pit)] = True
    for y in range(height):
        for x in range(width):
            s = idx(x, y)
            for a, (dx, dy) in enumerate(MOVES):
                nx = min(max(x + dx, 0), width - 1)
                ny = min(max(y + dy, 0), height - 1)
                ns = idx(nx, ny)
                T[s, a, ns] = 1.0
                if terminal[s]:
                    R[s, a] = 0.0
                elif (nx, ny) == goal:
                    R[s, a] = 1.0
                elif (nx, ny) == pit:
                    R[s, a] = -1.0
    return TabularMDP(T, R, terminal), goal, pit


def GridWorld(width: int = 4, height: int = 4, obs: str = "onehot", horizon: int | None = None,
              seed=None, **kwargs) -> TabularEnv:
    """Grid navigation with flattened one-hot or intensity-grid observations.

    The intensity encoding marks the agent cell 1.0, the goal 0.5 and the pit
    0.25 on a ``width * height`` canvas.
    """
    mdp, goal, pit = grid_mdp(width, height, **kwargs)
    S = width * height
    if obs == "onehot":
        encode = None
    elif obs == "intensity":
        base = np.zeros(S)
        base[goal[1] * width + goal[0]] = 0.5
        base[pit[1] * width + pit[0]] = 0.25

        def encode(s):
            out = base.copy()
            out[s] = 1.0
            return out
    else:
        raise UsageError(f"unknown grid observation kind {obs!r}")
    horizon = 4 * S if horizon is None else int(horizon)
    return TabularEnv(mdp, horizon, encode=encode, name=f"grid:w={width},h={height},obs={obs}",
                      seed=seed)


def bandit_mdp(k: int = 5, means=None) -> TabularMDP:
    if k < 1:
        raise UsageError("bandit needs at least one arm")
    means = np.linspace(0.0, 1.0, k) if means is None else np.asarray(means, dtype=np.float64)
    if means.shape != (k,):
        raise UsageError("need one mean per arm")
    T = np.zeros((2, k, 2))
    T[:, :, 1] = 1.0
    R = np.zeros((2, k))
    R[0] = means
    return TabularMDP(T, R, terminal=[False, True])


def NoisyBandit(k: int = 5, noise: float = 0.1, means=None, seed=None) -> TabularEnv:
    """One-step episodes; arm ``i`` pays ``means[i]`` plus Gaussian noise."""
    if noise < 0:
        raise UsageError("noise must be >= 0")
    return TabularEnv(bandit_mdp(k, means), 1, reward_noise=noise,
                      name=f"bandit:k={k},noise={noise:g}", seed=seed)
