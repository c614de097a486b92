"""Bound formulas and the summary statistics used by reports and acceptance."""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
from scipy import stats as st


# -- analytic bounds -----------------------------------------------------------

def win_probability_bound(delta: int, K: int) -> float:
    """Lower bound on the chance that an open trial is won."""
    m = 2 * delta * delta
    return (1.0 - 1.0 / K) ** m / m


def expected_trials_bound(delta: int, K: int) -> float:
    """Upper bound on the expected number of open trials until a win."""
    return 1.0 / win_probability_bound(delta, K)


def trial_rounds_bound(k: int, delta: int) -> int:
    """Open-round bound for a trial whose initiator heads a DAG path with ``k`` initiators."""
    return 2 * k * (10 * delta + 20)


def request_rounds_bound(n: int, delta: int, c: float) -> float:
    """Open-round bound for one lock request with ``K = c * delta**2``."""
    return (2 * delta + 4) * (7 + 20 * math.exp(4.0 / c) * n * delta * delta)


def enabled_bound(delta: int) -> int:
    return 2 * delta + 4


# -- intervals -----------------------------------------------------------------

class Interval(NamedTuple):
    estimate: float
    low: float
    high: float
    count: int


def mean_ci(values: Sequence[float], level: float = 0.95) -> Interval:
    """Mean with a Student-t confidence interval (degenerate below two samples)."""
    n = len(values)
    if n == 0:
        return Interval(math.nan, math.nan, math.nan, 0)
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    if n < 2:
        return Interval(mean, mean, mean, 1)
    half = float(st.t.ppf(0.5 + level / 2, n - 1) * arr.std(ddof=1) / math.sqrt(n))
    return Interval(mean, mean - half, mean + half, n)


def proportion_ci(successes: int, trials: int, level: float = 0.95) -> Interval:
    """Wilson score interval."""
    if trials == 0:
        return Interval(math.nan, math.nan, math.nan, 0)
    ci = st.binomtest(successes, trials).proportion_ci(confidence_level=level, method="wilson")
    return Interval(successes / trials, float(ci.low), float(ci.high), trials)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    if len(xs) < 2:
        return math.nan
    slope, _ = np.polyfit(np.log(np.asarray(xs, dtype=float)), np.log(np.asarray(ys, dtype=float)), 1)
    return float(slope)
