"""Uniform experience replay backed by preallocated numpy arrays."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from ..errors import UsageError


class Transition(NamedTuple):
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    done: bool


class Batch(NamedTuple):
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray


class ReplayBuffer:
    """FIFO ring buffer; ``sample`` draws uniformly with replacement.

    Storage grows geometrically up to ``capacity`` so a 1e6 default does not
    allocate a million rows for a short run.
    """

    def __init__(self, capacity: int, obs_dim: int, n_actions: int | None = None, seed=None):
        if capacity < 1 or obs_dim < 1:
            raise UsageError("capacity and obs_dim must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self.n_actions = n_actions
        self.rng = np.random.default_rng(seed)
        self.inserted = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, rows):
        old = getattr(self, "_states", None)
        states = np.zeros((rows, self.obs_dim))
        next_states = np.zeros((rows, self.obs_dim))
        actions = np.zeros(rows, dtype=np.int64)
        rewards = np.zeros(rows)
        dones = np.zeros(rows)
        if old is not None:
            n = len(self)
            states[:n], next_states[:n] = self._states[:n], self._next[:n]
            actions[:n], rewards[:n], dones[:n] = self._actions[:n], self._rewards[:n], self._dones[:n]
        self._states, self._next = states, next_states
        self._actions, self._rewards, self._dones = actions, rewards, dones

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def add(self, state, action, reward, next_state, done) -> None:
        a = int(action)
        if self.n_actions is not None and not 0 <= a < self.n_actions:
            raise UsageError(f"action {action} out of range")
        if not np.isfinite(reward):
            raise UsageError("reward must be finite")
        slot = self.inserted % self.capacity
        if slot >= self._states.shape[0]:
            self._alloc(min(self.capacity, 2 * self._states.shape[0]))
        self._states[slot] = state
        self._next[slot] = next_state
        self._actions[slot] = a
        self._rewards[slot] = reward
        self._dones[slot] = float(bool(done))
        self.inserted += 1

    def sample_indices(self, batch_size: int) -> np.ndarray:
        if len(self) == 0:
            raise UsageError("cannot sample from an empty buffer")
        return self.rng.integers(0, len(self), size=int(batch_size))

    def sample(self, batch_size: int) -> Batch:
        idx = self.sample_indices(batch_size)
        return Batch(
            self._states[idx], self._actions[idx], self._rewards[idx], self._next[idx], self._dones[idx]
        )

    def get(self, i: int) -> Transition:
        """Transition stored at ring slot ``i``."""
        if not 0 <= i < len(self):
            raise IndexError(i)
        return Transition(self._states[i].copy(), int(self._actions[i]), float(self._rewards[i]),
                          self._next[i].copy(), bool(self._dones[i]))
