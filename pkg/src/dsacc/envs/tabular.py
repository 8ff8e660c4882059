"""Finite MDPs, a gym-like stepping wrapper, and exact tabular oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from ..errors import NumericalError, UsageError


@dataclass(frozen=True)
class EnvDescription:
    name: str
    observation_dim: int
    action_count: int
    max_episode_steps: int


class TabularMDP:
    """Transition tensor ``T[s, a, s']``, rewards ``R[s, a]``, terminal mask, start distribution."""

    def __init__(self, T, R, terminal=None, initial=None):
        T = np.array(T, dtype=np.float64)
        R = np.array(R, dtype=np.float64)
        if T.ndim != 3 or T.shape[0] != T.shape[2] or T.shape[:2] != R.shape:
            raise UsageError(f"inconsistent shapes T{T.shape} R{R.shape}")
        if np.any(T < 0) or np.max(np.abs(T.sum(axis=2) - 1.0)) > 1e-12:
            raise UsageError("every T[s, a] row must be a probability distribution")
        if not np.all(np.isfinite(R)):
            raise UsageError("rewards must be finite")
        S = T.shape[0]
        terminal = np.zeros(S, bool) if terminal is None else np.array(terminal, dtype=bool)
        if initial is None:
            initial = np.zeros(S)
            initial[0] = 1.0
        initial = np.array(initial, dtype=np.float64)
        if terminal.shape != (S,) or initial.shape != (S,):
            raise UsageError("terminal mask and initial distribution need one entry per state")
        if abs(initial.sum() - 1.0) > 1e-12 or np.any(initial[terminal] > 0):
            raise UsageError("initial distribution must sum to 1 and avoid terminal states")
        self.T, self.R, self.terminal, self.initial = T, R, terminal, initial

    @property
    def n_states(self) -> int:
        return self.T.shape[0]

    @property
    def n_actions(self) -> int:
        return self.T.shape[1]


class StepResult(NamedTuple):
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool

    @property
    def done(self) -> bool:
        return self.terminated or self.truncated


def one_hot_encoder(n: int) -> Callable[[int], np.ndarray]:
    eye = np.eye(n)
    return lambda s: eye[s].copy()


class TabularEnv:
    """Samples trajectories from a :class:`TabularMDP`.

    Args:
        mdp: the underlying model.
        max_episode_steps: truncation horizon.
        encode: maps a state index to an observation vector (one-hot default).
        reward_noise: std of Gaussian noise added to emitted rewards.
        name: identifier used in logs and manifests.
        obs_high: largest value an observation coordinate can take.
    """

    def __init__(self, mdp: TabularMDP, max_episode_steps: int, encode=None, reward_noise=0.0,
                 name="tabular", seed=None, obs_high=1.0):
        if max_episode_steps < 1:
            raise UsageError("max_episode_steps must be >= 1")
        self.mdp = mdp
        self.encode = encode or one_hot_encoder(mdp.n_states)
        self.reward_noise = float(reward_noise)
        self.obs_high = float(obs_high)
        obs_dim = int(np.size(self.encode(0)))
        self.description = EnvDescription(name, obs_dim, mdp.n_actions, int(max_episode_steps))
        self.rng = np.random.default_rng(seed)
        self.state = None
        self.t = 0
        self._done = True
        # cumulative sums make sampling a single searchsorted
        self._cdf = np.cumsum(mdp.T, axis=2)
        self._init_cdf = np.cumsum(mdp.initial)

    @property
    def observation_dim(self) -> int:
        return self.description.observation_dim

    @property
    def action_count(self) -> int:
        return self.description.action_count

    @property
    def max_episode_steps(self) -> int:
        return self.description.max_episode_steps

    def _draw(self, cdf) -> int:
        return int(min(np.searchsorted(cdf, self.rng.random(), side="right"), cdf.size - 1))

    def reset(self, seed=None) -> np.ndarray:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = self._draw(self._init_cdf)
        self.t = 0
        self._done = False
        return self.encode(self.state)

    def step(self, action) -> StepResult:
        if self.state is None:
            raise UsageError("call reset() before step()")
        if self._done:
            raise UsageError("episode is over; call reset()")
        a = int(action)
        if not 0 <= a < self.action_count:
            raise UsageError(f"action {action} outside [0, {self.action_count})")
        s = self.state
        reward = float(self.mdp.R[s, a])
        if self.reward_noise > 0:
            reward += self.reward_noise * float(self.rng.standard_normal())
        nxt = self._draw(self._cdf[s, a])
        self.state = nxt
        self.t += 1
        terminated = bool(self.mdp.terminal[nxt])
        truncated = not terminated and self.t >= self.max_episode_steps
        self._done = terminated or truncated
        return StepResult(self.encode(nxt), reward, terminated, truncated)


def _soft_max(q, alpha):
    if alpha == 0:
        return q.max(axis=1)
    top = q.max(axis=1)
    return top + alpha * np.log(np.sum(np.exp((q - top[:, None]) / alpha), axis=1))


def bellman_backup(mdp: TabularMDP, q, alpha: float, gamma: float) -> np.ndarray:
    """One soft backup; terminal states have zero continuation value."""
    v = np.where(mdp.terminal, 0.0, _soft_max(q, alpha))
    return mdp.R + gamma * mdp.T @ v


def soft_value_iteration(mdp: TabularMDP, alpha: float, gamma: float, tol: float = 1e-10,
                         max_iter: int = 200_000):
    """Entropy-regularised value iteration.

    Uses ``V(s) = alpha * logsumexp(Q(s, .) / alpha)``; ``alpha = 0`` gives the
    hard maximum.

    Returns:
        ``(Q, policy)`` with ``policy = softmax(Q / alpha)`` row-wise (greedy
        one-hot with lowest-index ties when ``alpha = 0``).
    """
    if alpha < 0 or tol <= 0 or not 0 <= gamma <= 1:
        raise UsageError("need alpha >= 0, tol > 0 and gamma in [0, 1]")
    q = np.zeros_like(mdp.R)
    for _ in range(max_iter):
        new = bellman_backup(mdp, q, alpha, gamma)
        if not np.all(np.isfinite(new)):
            raise NumericalError("soft value iteration diverged", {"alpha": alpha, "gamma": gamma})
        delta = np.max(np.abs(new - q))
        q = new
        if delta < tol:
            return q, greedy_or_soft_policy(q, alpha)
    raise NumericalError("soft value iteration did not converge",
                         {"alpha": alpha, "gamma": gamma, "max_iter": max_iter})


def greedy_or_soft_policy(q, alpha: float) -> np.ndarray:
    if alpha == 0:
        pi = np.zeros_like(q)
        pi[np.arange(q.shape[0]), np.argmax(q, axis=1)] = 1.0
        return pi
    z = (q - q.max(axis=1, keepdims=True)) / alpha
    w = np.exp(z)
    return w / w.sum(axis=1, keepdims=True)


def expected_episode_return(mdp: TabularMDP, policy, horizon: int) -> float:
    """Exact undiscounted expected return of a stationary policy over ``horizon`` steps."""
    policy = np.asarray(policy, dtype=np.float64)
    d = mdp.initial.copy()
    r_pi = np.sum(policy * mdp.R, axis=1)
    P = np.einsum("sa,sat->st", policy, mdp.T)
    total = 0.0
    for _ in range(horizon):
        total += float(d @ r_pi)
        d = d @ P
        d[mdp.terminal] = 0.0
    return total
