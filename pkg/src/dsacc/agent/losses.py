"""Critic, actor and temperature objectives with closed-form gradients.

All functions work on network *outputs* (Q tables, actor logits) for a batch
of states. Gradients are returned with respect to those outputs so the
caller can push them through :meth:`dsacc.nets.Network.backward`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import NumericalError, UsageError
from ..maxent import ConstraintKind, SolveStatus, solve_lambda_batch, status_code
from .config import Aggregation, Variant

EPS = np.finfo(np.float64).eps


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def policy_terms(logits):
    """``(probs, log_probs)`` of the categorical policy defined by ``logits``."""
    logp = log_softmax(logits)
    return np.exp(logp), logp


def entropy(probs, logp) -> np.ndarray:
    return -np.sum(_plogp(probs, logp), axis=-1)


def _plogp(probs, logp):
    # pi * ln pi is exactly 0 where pi underflowed
    return np.where(probs > 0, probs * logp, 0.0)


def _check_finite(name, *arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise NumericalError(f"non-finite values in {name}", {"where": name})


def aggregate(q1, q2, aggregation: Aggregation) -> np.ndarray:
    if Aggregation(aggregation) is Aggregation.MIN:
        return np.minimum(q1, q2)
    return 0.5 * (np.asarray(q1) + np.asarray(q2))


def soft_state_value(probs, logp, q1, q2, alpha: float, aggregation=Aggregation.AVG) -> np.ndarray:
    """``sum_a pi(a) [agg(Q1, Q2)(a) - alpha ln pi(a)]`` for each row."""
    if alpha <= 0:
        raise UsageError("alpha must be positive")
    _check_finite("target critic outputs", q1, q2)
    q = aggregate(q1, q2, aggregation)
    return np.sum(probs * q, axis=-1) - alpha * np.sum(_plogp(probs, logp), axis=-1)


def critic_targets(rewards, dones, next_values, gamma: float) -> np.ndarray:
    """TD targets ``r + gamma (1 - done) V(s')``; truncated steps keep their bootstrap."""
    rewards = np.asarray(rewards, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    v = np.where(dones > 0, 0.0, np.asarray(next_values, dtype=np.float64))
    return rewards + gamma * (1.0 - dones) * v


def critic_loss(q_tables, actions, targets):
    """Mean over samples and critics of ``(Q(s, a) - y)^2``.

    Args:
        q_tables: sequence of ``(B, A)`` critic outputs.
        actions: ``(B,)`` taken actions.
        targets: ``(B,)`` TD targets, treated as constants.

    Returns:
        ``(loss, grads)`` with one ``(B, A)`` output-gradient per critic; only
        the taken-action column is nonzero.
    """
    actions = np.asarray(actions, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.float64)
    n = len(q_tables)
    B = actions.shape[0]
    rows = np.arange(B)
    loss = 0.0
    grads = []
    for q in q_tables:
        err = q[rows, actions] - targets
        loss += float(np.sum(err * err)) / (B * n)
        g = np.zeros_like(q)
        g[rows, actions] = 2.0 * err / (B * n)
        grads.append(g)
    return loss, grads


@dataclass
class ActorLossResult:
    loss: float
    grad_logits: np.ndarray
    probs: np.ndarray
    logp: np.ndarray
    lam: np.ndarray | None
    statuses: np.ndarray | None
    mean_gap: np.ndarray
    var_gap: np.ndarray
    expected_q: np.ndarray


def surrogate_moments(q, alpha: float, return_probs: bool = False):
    """Mean and variance of ``q`` under ``softmax(q / alpha)``, row-wise."""
    z = q / alpha
    w = np.exp(z - np.max(z, axis=1, keepdims=True))
    p = w / np.sum(w, axis=1, keepdims=True)
    mu = np.sum(p * q, axis=1)
    var = np.sum(p * (q - mu[:, None]) ** 2, axis=1)
    return (mu, var, p) if return_probs else (mu, var)


def _target_rounding(p, feature):
    # generous bound on the float error of an expectation of ``feature`` under ``p``
    return 8.0 * EPS * feature.shape[1] * np.sum(p * np.abs(feature), axis=1)


def actor_loss(logits, q, alpha: float, variant=Variant.DSAC, target_q=None, lam=None, center=None):
    """Expected-form actor objective and its gradient w.r.t. the logits.

    Args:
        logits: ``(B, A)`` actor outputs.
        q: ``(B, A)`` critic values entering the loss (mean of the two online
            critics); constants.
        alpha: temperature.
        variant: which constraint to add.
        target_q: values the constraint targets are computed from; defaults
            to ``q``.
        lam, center: optional fixed multipliers / variance center. Normally
            solved here; passing them freezes the constants, which is what a
            finite-difference check of the gradient needs.

    The per-state loss is ``sum_a pi [alpha ln pi - Q]`` plus, for DSAC-M,
    ``lam1 (sum_a pi Q - mu)`` and, for DSAC-V, ``lam2 (sum_a pi (Q - m)^2 - s2)``
    where ``mu, s2`` are the surrogate-policy mean and variance of
    ``target_q`` and ``m`` is the actor's own expected Q (held fixed). The
    multipliers come from the Newton solver per state and are constants.
    """
    variant = Variant(variant)
    logits = np.asarray(logits, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if logits.shape != q.shape or logits.ndim != 2:
        raise UsageError(f"logits {logits.shape} and q {q.shape} must be matching (B, A) arrays")
    _check_finite("actor inputs", logits, q)
    target_q = q if target_q is None else np.asarray(target_q, dtype=np.float64)
    B = q.shape[0]
    probs, logp = policy_terms(logits)

    mu_t, var_t, p_t = surrogate_moments(target_q, alpha, return_probs=True)
    expected_q = np.sum(probs * q, axis=1)
    actor_var = np.sum(probs * (q - expected_q[:, None]) ** 2, axis=1)

    # per-action coefficient c in  L = sum pi c + alpha sum pi ln pi (+ const)
    coeff = -q
    const = np.zeros(B)
    statuses = None
    fixed = lam is not None
    if variant is Variant.DSAC:
        lam = None
    elif variant is Variant.DSAC_M:
        if not fixed:
            sol = solve_lambda_batch(q, alpha, ConstraintKind.MEAN, mu_t,
                                     target_tol=_target_rounding(p_t, target_q))
            lam, statuses = sol.lam, sol.status
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (B,))
        coeff = coeff + lam[:, None] * q
        const = -lam * mu_t
    else:
        center = expected_q if center is None else np.broadcast_to(np.asarray(center, float), (B,))
        if not fixed:
            sol = solve_lambda_batch(q, alpha, ConstraintKind.VARIANCE, var_t, center,
                                     target_tol=_target_rounding(p_t, (target_q - mu_t[:, None]) ** 2))
            lam, statuses = sol.lam, sol.status
        lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), (B,))
        coeff = coeff + lam[:, None] * (q - center[:, None]) ** 2
        const = -lam * var_t
    if statuses is not None:
        # the solver already returns 0 for Degenerate rows; keep that explicit
        lam = np.where(statuses == _DEGENERATE, 0.0, lam)

    plogp = _plogp(probs, logp)
    per_state = np.sum(probs * coeff, axis=1) + alpha * np.sum(plogp, axis=1) + const
    loss = float(np.mean(per_state))
    if not math.isfinite(loss):
        raise NumericalError("actor loss is not finite", {"variant": variant.value})

    # d/dz_j of sum pi c = pi_j (c_j - E[c]);  of sum pi ln pi = pi_j (ln pi_j - E[ln pi])
    mean_c = np.sum(probs * coeff, axis=1, keepdims=True)
    mean_logp = np.sum(plogp, axis=1, keepdims=True)
    logp_safe = np.where(probs > 0, logp, 0.0)
    grad = probs * (coeff - mean_c) + alpha * probs * (logp_safe - mean_logp)
    grad /= B
    return ActorLossResult(
        loss=loss,
        grad_logits=grad,
        probs=probs,
        logp=logp,
        lam=lam,
        statuses=statuses,
        mean_gap=np.abs(expected_q - mu_t),
        var_gap=np.abs(actor_var - var_t),
        expected_q=expected_q,
    )


_DEGENERATE = status_code(SolveStatus.DEGENERATE)


@dataclass
class TemperatureState:
    """Entropy temperature optimised in log space by plain gradient descent."""

    log_alpha: float
    target_entropy: float
    learning_rate: float = 3e-4

    @classmethod
    def create(cls, n_actions: int, initial_alpha: float = 1.0, entropy_discount: float = 0.98,
               learning_rate: float = 3e-4) -> "TemperatureState":
        if n_actions < 1 or initial_alpha <= 0:
            raise UsageError("need n_actions >= 1 and initial_alpha > 0")
        return cls(math.log(initial_alpha), entropy_discount * math.log(n_actions), learning_rate)

    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)


def temperature_objective(log_alpha: float, entropies, target_entropy: float) -> float:
    """``mean_s alpha (H(s) - H_target)`` with ``alpha = exp(log_alpha)``."""
    return math.exp(log_alpha) * float(np.mean(np.asarray(entropies) - target_entropy))


def temperature_gradient(log_alpha: float, entropies, target_entropy: float) -> float:
    # d/d(log alpha) of alpha * c is alpha * c
    return temperature_objective(log_alpha, entropies, target_entropy)


def temperature_update(temp: TemperatureState, probs, logp) -> TemperatureState:
    """One descent step on ``log_alpha``; returns the updated state."""
    h = entropy(probs, logp)
    grad = temperature_gradient(temp.log_alpha, h, temp.target_entropy)
    if not math.isfinite(grad):
        raise NumericalError("temperature gradient is not finite", {"log_alpha": temp.log_alpha})
    return TemperatureState(temp.log_alpha - temp.learning_rate * grad, temp.target_entropy,
                            temp.learning_rate)
