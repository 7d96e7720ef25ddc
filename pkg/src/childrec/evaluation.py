"""Accuracy, coverage and paired significance tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from childrec.predict import PredictionBatch

# Continued-fraction settings for the incomplete beta function.
_BETACF_EPS = 1e-10
_BETACF_MAX_ITER = 500
_BETACF_FPMIN = 1e-300

SIGNIFICANCE_LEVEL = 0.05

# Differences spread less than this (relative) count as constant.
_CONSTANT_RTOL = 1e-12


def _as_pair(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"Length mismatch: {x.shape} vs {y.shape}")
    return x, y


def rmse(predictions: Sequence[float] | np.ndarray, truths: Sequence[float] | np.ndarray) -> float:
    """Root mean squared error.

    Raises:
        ValueError: On a length mismatch or empty input.
    """
    p, t = _as_pair(predictions, truths)
    if len(p) == 0:
        raise ValueError("rmse needs at least one pair")
    return math.sqrt(float(np.mean((p - t) ** 2)))


def coverage(users: Sequence[str] | np.ndarray, served: Sequence[bool] | np.ndarray) -> tuple[float, float]:
    """Served fractions of test users and test pairs.

    A user counts as served when at least one of their pairs was served by
    the model proper.

    Returns:
        (served_user_fraction, served_pair_fraction); (0.0, 0.0) for no pairs.
    """
    users = np.asarray(users, dtype=object)
    flags = np.asarray(served, dtype=bool)
    if len(users) != len(flags):
        raise ValueError(f"Length mismatch: {len(users)} users vs {len(flags)} flags")
    if len(flags) == 0:
        return 0.0, 0.0
    all_users = set(users.tolist())
    served_users = set(users[flags].tolist())
    return len(served_users) / len(all_users), float(flags.mean())


@dataclass(frozen=True)
class EvalReport:
    """Evaluation of one predictor on one test set.

    Attributes:
        rmse: Root mean squared error over every test pair.
        n: Number of test pairs.
        served_user_fraction: Share of test users with a served pair.
        served_pair_fraction: Share of test pairs served.
        per_pair_sq_errors: Squared error per test pair, in test order.
        served_flags: Served flag per test pair, in test order.
        served_rmse: RMSE over served pairs only, None when none was served.
    """

    rmse: float
    n: int
    served_user_fraction: float
    served_pair_fraction: float
    per_pair_sq_errors: np.ndarray
    served_flags: np.ndarray
    served_rmse: float | None = None


def evaluate(
    batch: PredictionBatch, truths: Sequence[float] | np.ndarray, users: Sequence[str] | np.ndarray,
) -> EvalReport:
    """Score a batch of predictions against the true ratings.

    Raises:
        ValueError: On a length mismatch or an empty test set.
    """
    p, t = _as_pair(batch.values, truths)
    if len(p) == 0:
        raise ValueError("Cannot evaluate an empty test set")
    sq = (p - t) ** 2
    served = np.asarray(batch.served, dtype=bool)
    user_fraction, pair_fraction = coverage(users, served)
    served_rmse = math.sqrt(float(sq[served].mean())) if served.any() else None
    return EvalReport(
        math.sqrt(float(sq.mean())), len(sq), user_fraction, pair_fraction, sq, served, served_rmse
    )


def pool_reports(reports: Sequence[EvalReport], users: Sequence[np.ndarray]) -> EvalReport:
    """Concatenate per-fold reports into one over all their test pairs.

    Args:
        reports: Per-fold reports.
        users: Test user per pair, one array per report.
    """
    sq = np.concatenate([r.per_pair_sq_errors for r in reports])
    flags = np.concatenate([r.served_flags for r in reports])
    user_fraction, pair_fraction = coverage(np.concatenate(users), flags)
    served_rmse = math.sqrt(float(sq[flags].mean())) if flags.any() else None
    return EvalReport(
        math.sqrt(float(sq.mean())), len(sq), user_fraction, pair_fraction, sq, flags, served_rmse
    )


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction of the incomplete beta function (modified Lentz)."""
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _BETACF_FPMIN:
        d = _BETACF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, _BETACF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _BETACF_FPMIN:
            d = _BETACF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < _BETACF_FPMIN:
            c = _BETACF_FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETACF_EPS:
            return h
    raise ArithmeticError(f"Incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}")


def betai(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b).

    Raises:
        ValueError: If x is outside [0, 1].
    """
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_bt = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    bt = math.exp(log_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _betacf(a, b, x) / a
    return 1.0 - bt * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided tail probability P(|T| >= |t|) for Student's t with df degrees of freedom."""
    if math.isinf(t):
        return 0.0
    return betai(df / 2.0, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class TTestResult:
    """Outcome of a paired t-test.

    When the differences have zero variance but a nonzero mean the statistic
    is unbounded: ``defined`` is False, t is +-inf, p is 1 and the result is
    not reported as significant. p always lies in (0, 1].
    """

    t: float
    p: float
    significant_at_05: bool
    n: int
    mean_difference: float
    defined: bool = True


def paired_t_test(
    sq_errors_a: Sequence[float] | np.ndarray, sq_errors_b: Sequence[float] | np.ndarray,
) -> TTestResult:
    """Two-sided paired t-test on per-pair differences a - b.

    Raises:
        ValueError: On a length mismatch or fewer than 2 pairs.
    """
    a, b = _as_pair(sq_errors_a, sq_errors_b)
    n = len(a)
    if n < 2:
        raise ValueError(f"paired_t_test needs at least 2 pairs, got {n}")
    d = a - b
    mean = float(d.mean())
    scale = float(np.abs(d).max())
    if float(np.ptp(d)) <= _CONSTANT_RTOL * scale:
        if scale == 0.0:
            return TTestResult(0.0, 1.0, False, n, 0.0)
        return TTestResult(math.copysign(math.inf, mean), 1.0, False, n, mean, defined=False)
    sd = float(d.std(ddof=1))
    t = mean / (sd / math.sqrt(n))
    p = min(1.0, student_t_two_sided_p(t, n - 1))
    return TTestResult(t, p, p < SIGNIFICANCE_LEVEL, n, mean)
