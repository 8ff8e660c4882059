"""Maximum-entropy policies over discrete actions and their Lagrange multipliers.

Every policy here is a Boltzmann distribution over action values ``q`` at
temperature ``alpha``:

* surrogate (critic) policy:      softmax(q / alpha)
* mean-constrained policy:        softmax((q - lam * q) / alpha)
* variance-constrained policy:    softmax((q - lam * (q - c)**2) / alpha)

Both constrained forms share the structure ``softmax((q - lam * f) / alpha)``
with constraint feature ``f = q`` (mean) or ``f = (q - c)**2`` (variance).  For
that family the constraint residual is ``g(lam) = E_pi[f] - target`` and its
derivative is ``g'(lam) = -Var_pi[f] / alpha``, which is never positive.  The
solver below exploits that monotonicity.

All functions are pure.  Batched variants operate row-wise on ``(B, A)``
arrays and are what the training loop uses.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NumericalError, UsageError

EPS = np.finfo(np.float64).eps
#: Newton stopping tolerance on |g(lam)|.
NEWTON_TOL = 1e-15
#: |g'| below this means the Newton step is undefined.
DEGENERATE_SLOPE = 1e-12
MAX_NEWTON_ITERS = 100
#: |g| <= tol only counts once the implied Newton step is below this as well.
STEP_TOL = 1e-12
_MAX_BRACKET_ITERS = 200


class ConstraintKind(enum.Enum):
    MEAN = "mean"
    VARIANCE = "variance"


class SolveStatus(enum.Enum):
    CONVERGED = "Converged"
    CLIPPED_LOW = "ClippedLow"
    CLIPPED_HIGH = "ClippedHigh"
    DEGENERATE = "Degenerate"


_STATUS_BY_CODE = list(SolveStatus)
_CODE = {status: i for i, status in enumerate(_STATUS_BY_CODE)}


def status_code(status: SolveStatus) -> int:
    """Integer code used for ``status`` in :class:`BatchSolution`."""
    return _CODE[SolveStatus(status)]


_UNRESOLVED = -1


@dataclass(frozen=True)
class QVector:
    """Action values of one state together with the temperature."""

    q: np.ndarray
    alpha: float = 1.0

    def __post_init__(self):
        q = np.array(self.q, dtype=np.float64)
        if q.ndim != 1 or q.size < 1:
            raise UsageError(f"q must be a non-empty 1-d vector, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise UsageError(f"q must be finite, got {q.tolist()}")
        alpha = float(self.alpha)
        if not (np.isfinite(alpha) and alpha > 0.0):
            raise UsageError(f"alpha must be a positive finite number, got {self.alpha}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "alpha", alpha)

    def __len__(self):
        return self.q.size


@dataclass(frozen=True)
class ConstraintTarget:
    """Expected-value target for one constraint.

    For ``VARIANCE`` the squared deviation is taken around ``center``.
    """

    kind: ConstraintKind
    target: float
    center: float | None = None

    def __post_init__(self):
        kind = ConstraintKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not np.isfinite(self.target):
            raise UsageError(f"constraint target must be finite, got {self.target}")
        if kind is ConstraintKind.VARIANCE:
            if self.center is None or not np.isfinite(self.center):
                raise UsageError("variance constraint needs a finite center")
            if self.target < 0:
                raise UsageError(f"variance target must be >= 0, got {self.target}")

    @classmethod
    def mean(cls, target: float) -> "ConstraintTarget":
        return cls(ConstraintKind.MEAN, float(target))

    @classmethod
    def variance(cls, target: float, center: float) -> "ConstraintTarget":
        return cls(ConstraintKind.VARIANCE, float(target), float(center))


@dataclass(frozen=True)
class LagrangeSolution:
    lam: float
    residual: float
    iterations: int
    status: SolveStatus


class BatchSolution(NamedTuple):
    """Row-wise solver output; ``status`` holds integer codes (see ``statuses``)."""

    lam: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    status: np.ndarray

    def statuses(self) -> list[SolveStatus]:
        return [_STATUS_BY_CODE[c] for c in self.status]

    def count(self, status: SolveStatus) -> int:
        return int(np.count_nonzero(self.status == _CODE[status]))


# ---------------------------------------------------------------------------
# Softmax and Boltzmann policies


def _softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def stable_softmax(logits) -> np.ndarray:
    """Softmax along the last axis, shifted by the row maximum.

    Overflow cannot happen for finite input; entries more than ~745 below the
    maximum underflow to exact zeros.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim == 0 or z.shape[-1] == 0:
        raise UsageError("softmax needs at least one logit")
    if np.isnan(z).any():
        raise UsageError("softmax input contains NaN")
    if not np.isfinite(z).all():
        raise UsageError("softmax input must be finite")
    return _softmax(z)


def _values(qv) -> np.ndarray:
    return qv.q if isinstance(qv, QVector) else np.asarray(qv, dtype=np.float64)


def _check_lambda(lam, name):
    if not (0.0 <= lam <= 1.0):
        raise UsageError(f"{name} must lie in [0, 1], got {lam}")


def surrogate_policy(qv: QVector) -> np.ndarray:
    """Boltzmann policy softmax(q / alpha) implied by the critic."""
    return stable_softmax(qv.q / qv.alpha)


def mean_constrained_policy(qv: QVector, lambda1: float) -> np.ndarray:
    _check_lambda(lambda1, "lambda1")
    return stable_softmax((qv.q - lambda1 * qv.q) / qv.alpha)


def variance_constrained_policy(qv: QVector, lambda2: float, center: float) -> np.ndarray:
    _check_lambda(lambda2, "lambda2")
    if not np.isfinite(center):
        raise UsageError(f"center must be finite, got {center}")
    return stable_softmax((qv.q - lambda2 * (qv.q - center) ** 2) / qv.alpha)


def expected_mean(pi, qv) -> float | np.ndarray:
    """Probability-weighted mean ``sum_a pi[a] * q[a]`` (row-wise for 2-d input)."""
    pi = np.asarray(pi, dtype=np.float64)
    q = _values(qv)
    if pi.shape != q.shape:
        raise UsageError(f"policy shape {pi.shape} does not match q shape {q.shape}")
    return np.sum(pi * q, axis=-1)


def expected_variance(pi, qv, center) -> float | np.ndarray:
    """Probability-weighted squared deviation of q around ``center``."""
    pi = np.asarray(pi, dtype=np.float64)
    q = _values(qv)
    if pi.shape != q.shape:
        raise UsageError(f"policy shape {pi.shape} does not match q shape {q.shape}")
    center = np.asarray(center, dtype=np.float64)
    if not np.all(np.isfinite(center)):
        raise UsageError("center must be finite")
    if center.ndim:
        center = center[..., None]
    return np.sum(pi * (q - center) ** 2, axis=-1)


# ---------------------------------------------------------------------------
# Residual and derivative


def _feature(q, kind, center):
    if kind is ConstraintKind.MEAN:
        return q
    return (q - center[:, None]) ** 2


def _stats(q, f, alpha, lam, target):
    """Row-wise residual, derivative and rounding floor at multipliers ``lam``."""
    # overflow shows up as non-finite outputs, which the callers check and report
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return _stats_raw(q, f, alpha, lam, target)


def _stats_raw(q, f, alpha, lam, target):
    z = (q - lam[:, None] * f) / alpha
    pi = _softmax(z)
    # sum of pi * (f - t) rather than E[f] - t: exact cancellation when the
    # dominant action already sits on the target
    dev = f - target[:, None]
    g = np.sum(pi * dev, axis=1)
    # two-pass central moment: E[f^2] - E[f]^2 cancels badly near point masses
    var = np.sum(pi * (dev - g[:, None]) ** 2, axis=1)
    # exp(z - max z) is exact for the leading action and carries relative error
    # ~ eps * (|z| + |max z|) for the others
    top = np.max(z, axis=1, keepdims=True)
    weight = np.where(z == top, 2.0, 2.0 + np.abs(z) + np.abs(top))
    floor = 4.0 * EPS * np.sum(pi * np.abs(dev) * weight, axis=1)
    return g, -var / np.reshape(alpha, -1), floor


def _rows(qv: QVector, ct: ConstraintTarget):
    q = qv.q[None, :]
    center = None if ct.center is None else np.array([ct.center])
    return q, _feature(q, ct.kind, center), np.array([ct.target])


def g_residual(qv: QVector, lam: float, ct: ConstraintTarget) -> float:
    """Constraint residual of the constrained policy at multiplier ``lam``.

    The mean form uses the mean-constrained policy, the variance form the
    variance-constrained policy centred at ``ct.center``.
    """
    if not np.isfinite(lam):
        raise UsageError(f"lambda must be finite, got {lam}")
    q, f, target = _rows(qv, ct)
    g, _, _ = _stats(q, f, qv.alpha, np.array([float(lam)]), target)
    return float(g[0])


def g_derivative(qv: QVector, lam: float, ct: ConstraintTarget) -> float:
    """Analytic d g / d lam.

    Mean form: minus the policy variance of q, over alpha.  Variance form:
    minus ``E[(q-c)^4] - E[(q-c)^2]^2`` over alpha (the "kurtosis" term).
    """
    if not np.isfinite(lam):
        raise UsageError(f"lambda must be finite, got {lam}")
    q, f, target = _rows(qv, ct)
    _, d, _ = _stats(q, f, qv.alpha, np.array([float(lam)]), target)
    return float(d[0])


# ---------------------------------------------------------------------------
# Solver


def _settled(g, d, floor, tol):
    """Residual is zero to float precision, or within tol and pinned in lambda."""
    g = np.abs(g)
    return (g <= floor) | ((g <= tol) & (g <= STEP_TOL * np.abs(d)))


def _raise_nonfinite(rows, q, alpha, kind, target, center, trace):
    r = int(rows[0])
    raise NumericalError(
        "non-finite value while solving for the Lagrange multiplier",
        {
            "q": q[r].tolist(),
            "alpha": float(np.broadcast_to(alpha, (q.shape[0], 1))[r, 0]),
            "kind": kind.value,
            "target": float(target[r]),
            "center": None if center is None else float(center[r]),
            "lambda_trace": [float(t[r]) for t in trace],
        },
    )


def solve_lambda_batch(
    q,
    alpha,
    kind,
    target,
    center=None,
    *,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_NEWTON_ITERS,
    target_tol=None,
) -> BatchSolution:
    """Solve ``g(lam) = 0`` on [0, 1] independently for each row of ``q``.

    Newton's method starts from ``lam = 0``.  A row is converged once
    ``|g| <= tol`` or ``|g|`` is at the rounding floor of its own evaluation.
    Rows whose Newton iterate leaves [0, 1], whose slope vanishes, or that run
    out of iterations fall back to sign analysis of ``g(0)`` and ``g(1)``:
    equal signs clip to the endpoint with the smaller residual, opposite signs
    are finished by safeguarded Newton-bisection inside the bracket.  Rows
    where both the slope and the spread ``g(1) - g(0)`` vanish are degenerate
    and get ``lam = 0``.

    Args:
        q: ``(B, A)`` action values.
        alpha: positive temperature, scalar or ``(B,)``.
        kind: ``ConstraintKind`` (or its string value).
        target: ``(B,)`` constraint targets.
        center: ``(B,)`` deviation centres, variance form only.
        target_tol: optional ``(B,)`` rounding uncertainty of the targets
            themselves; rows with ``|g(0)|`` inside it settle at ``lam = 0``
            instead of chasing a root that only exists in the noise.
    """
    kind = ConstraintKind(kind)
    q = np.atleast_2d(np.asarray(q, dtype=np.float64))
    n = q.shape[0]
    target = np.broadcast_to(np.asarray(target, dtype=np.float64), (n,)).copy()
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim:
        alpha = np.broadcast_to(alpha, (n,))[:, None]
    if kind is ConstraintKind.VARIANCE:
        if center is None:
            raise UsageError("variance constraint needs centers")
        center = np.broadcast_to(np.asarray(center, dtype=np.float64), (n,)).copy()
    f = _feature(q, kind, center)

    def stats(rows, lam):
        a = alpha if alpha.ndim == 0 else alpha[rows]
        return _stats(q[rows], f[rows], a, lam, target[rows])

    every = np.arange(n)
    lam = np.zeros(n)
    trace = [lam.copy()]
    g0, d0, floor0 = stats(every, lam)
    g1, _, floor1 = stats(every, np.ones(n))
    bad = ~(np.isfinite(g0) & np.isfinite(d0) & np.isfinite(g1))
    if bad.any():
        _raise_nonfinite(np.flatnonzero(bad), q, alpha, kind, target, center, trace)

    status = np.full(n, _UNRESOLVED)
    iters = np.zeros(n, dtype=np.int64)
    resid = np.abs(g0)

    # flat residual with no sign change: the constraint carries no information
    flat = (np.abs(d0) < DEGENERATE_SLOPE) & (
        np.abs(g1 - g0) <= np.maximum(tol, floor0 + floor1)
    )
    degenerate = flat & (g0 * g1 >= 0.0)
    status[degenerate] = _CODE[SolveStatus.DEGENERATE]
    at_origin = _settled(g0, d0, floor0, tol)
    if target_tol is not None:
        at_origin |= np.abs(g0) <= np.broadcast_to(np.asarray(target_tol, dtype=np.float64), (n,))
    at_origin &= status == _UNRESOLVED
    status[at_origin] = _CODE[SolveStatus.CONVERGED]

    g, d = g0.copy(), d0.copy()
    fallback = np.zeros(n, dtype=bool)
    active = np.flatnonzero(status == _UNRESOLVED)
    for _ in range(max_iter):
        if active.size == 0:
            break
        flat = np.abs(d[active]) < DEGENERATE_SLOPE
        fallback[active[flat]] = True
        active = active[~flat]
        step = g[active] / d[active]
        new = lam[active] - step
        leave = ~((new >= 0.0) & (new <= 1.0))
        fallback[active[leave]] = True
        active, step, new = active[~leave], step[~leave], new[~leave]
        if active.size == 0:
            break
        lam[active] = new
        iters[active] += 1
        trace.append(lam.copy())
        ga, da, fl = stats(active, new)
        bad = ~(np.isfinite(ga) & np.isfinite(da))
        if bad.any():
            _raise_nonfinite(active[bad], q, alpha, kind, target, center, trace)
        g[active], d[active] = ga, da
        resid[active] = np.abs(ga)
        done = _settled(ga, da, fl, tol) | (
            np.abs(step) <= 4.0 * EPS * np.maximum(1.0, np.abs(new))
        )
        status[active[done]] = _CODE[SolveStatus.CONVERGED]
        active = active[~done]
    fallback[active] = True

    rows = np.flatnonzero(fallback)
    if rows.size:
        same = g0[rows] * g1[rows] >= 0.0
        clip = rows[same]
        low = np.abs(g0[clip]) <= np.abs(g1[clip])
        lam[clip] = np.where(low, 0.0, 1.0)
        resid[clip] = np.where(low, np.abs(g0[clip]), np.abs(g1[clip]))
        status[clip] = np.where(
            low, _CODE[SolveStatus.CLIPPED_LOW], _CODE[SolveStatus.CLIPPED_HIGH]
        )
        bracket = rows[~same]
        if bracket.size:
            _bracketed(bracket, stats, g0, lam, resid, iters, status, tol, trace,
                       lambda r: _raise_nonfinite(r, q, alpha, kind, target, center, trace))
    return BatchSolution(lam, resid, iters, status)


def _bracketed(rows, stats, g0, lam, resid, iters, status, tol, trace, on_bad):
    """Safeguarded Newton-bisection on [0, 1] for rows with a sign change."""
    lo = np.zeros(rows.size)
    hi = np.ones(rows.size)
    positive_lo = g0[rows] > 0.0
    x = np.full(rows.size, 0.5)
    dx_old = np.ones(rows.size)
    live = np.arange(rows.size)
    for _ in range(_MAX_BRACKET_ITERS):
        r = rows[live]
        g, d, fl = stats(r, x[live])
        if not np.all(np.isfinite(g) & np.isfinite(d)):
            on_bad(r[~(np.isfinite(g) & np.isfinite(d))])
        iters[r] += 1
        lam[r] = x[live]
        resid[r] = np.abs(g)
        trace.append(lam.copy())
        done = _settled(g, d, fl, tol) | (hi[live] - lo[live] <= 4.0 * EPS)
        status[r[done]] = _CODE[SolveStatus.CONVERGED]
        keep = ~done
        live, g, d = live[keep], g[keep], d[keep]
        if live.size == 0:
            return
        # g is nonincreasing, so the sign of g tells which side of the root x is on
        left = (g > 0.0) == positive_lo[live]
        lo[live] = np.where(left, x[live], lo[live])
        hi[live] = np.where(left, hi[live], x[live])
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = x[live] - g / d
        use = (
            np.isfinite(newton)
            & (newton > lo[live])
            & (newton < hi[live])
            & (np.abs(2.0 * g) <= np.abs(dx_old[live] * d))
        )
        nxt = np.where(use, newton, 0.5 * (lo[live] + hi[live]))
        dx_old[live] = nxt - x[live]
        x[live] = nxt
    # iteration cap: keep the last iterate (bracket is at float resolution by now)
    status[rows[live]] = _CODE[SolveStatus.CONVERGED]


def solve_lambda(
    qv: QVector,
    ct: ConstraintTarget,
    *,
    tol: float = NEWTON_TOL,
    max_iter: int = MAX_NEWTON_ITERS,
) -> LagrangeSolution:
    """Per-state Newton solve of the Lagrange multiplier, clipped to [0, 1]."""
    center = None if ct.center is None else [ct.center]
    sol = solve_lambda_batch(
        qv.q[None, :], qv.alpha, ct.kind, [ct.target], center, tol=tol, max_iter=max_iter
    )
    return LagrangeSolution(
        lam=float(sol.lam[0]),
        residual=float(sol.residual[0]),
        iterations=int(sol.iterations[0]),
        status=_STATUS_BY_CODE[sol.status[0]],
    )


def constrained_policy(qv: QVector, ct: ConstraintTarget, lam: float) -> np.ndarray:
    """Policy of the constraint family of ``ct`` at multiplier ``lam``."""
    if ct.kind is ConstraintKind.MEAN:
        return mean_constrained_policy(qv, lam)
    return variance_constrained_policy(qv, lam, ct.center)
