"""From raw timestamped observations to a tie-free, rank-ordered sample."""

from __future__ import annotations

from typing import NamedTuple, Tuple

import numpy as np
from scipy import stats

from .core import InvalidInputError, OrderedSample, RawSeries, ReturnSeries

DEFAULT_TIE_NOISE = 1e-8


def scaled_increments(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        return np.diff(values) / np.sqrt(np.diff(times))


def compute_returns(series: RawSeries) -> ReturnSeries:
    """Scaled returns ``R_{i-1} = (Y_i - Y_{i-1}) / sqrt(t_i - t_{i-1})``.

    Time steps are taken as they come, so calendar gaps (weekends, holidays)
    enter through the square root of the actual elapsed time.
    """
    returns = scaled_increments(series.times, series.values)
    bad = np.flatnonzero(~np.isfinite(returns))
    if bad.size:
        raise InvalidInputError(f"non-finite return at index {bad[0]} (overflow)")
    return ReturnSeries(levels=series.values[:-1], returns=returns, source=series)


def break_ties(
    series: RawSeries,
    relative_noise_variance: float = DEFAULT_TIE_NOISE,
    seed: int = 0,
) -> RawSeries:
    """Jitter every observation with small Gaussian noise so that levels are distinct.

    The noise variance is ``relative_noise_variance * mean(R**2)`` where ``R``
    are the scaled returns of the unperturbed series. A zero variance returns
    the input unchanged.
    """
    if relative_noise_variance < 0:
        raise InvalidInputError("relative_noise_variance must be non-negative")
    if relative_noise_variance == 0:
        return series
    tentative = scaled_increments(series.times, series.values)
    scale = np.sqrt(relative_noise_variance * np.mean(tentative**2))
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, 1.0, size=len(series)) * scale
    return RawSeries(series.times, series.values + noise, series.label)


def order_sample(returns: ReturnSeries) -> OrderedSample:
    """Sort (level, return) pairs by level, keeping the time index of each rank."""
    order = np.argsort(returns.levels, kind="stable")
    y = returns.levels[order]
    dup = np.flatnonzero(np.diff(y) == 0)
    if dup.size:
        raise InvalidInputError(
            f"tied level {y[dup[0]]!r} (time indices {order[dup[0]]} and {order[dup[0] + 1]}); "
            "apply break_ties before ordering"
        )
    return OrderedSample(y=y, r=returns.returns[order], order=order, source=returns.source)


def prepare_sample(series: RawSeries) -> OrderedSample:
    return order_sample(compute_returns(series))


def thin_series(series: RawSeries, stride: int) -> RawSeries:
    """Keep every ``stride``-th observation in time, starting with the first."""
    stride = int(stride)
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if stride == 1:
        return series
    idx = np.arange(0, len(series), stride)
    if idx.size < 2:
        raise InvalidInputError(f"stride {stride} leaves fewer than 2 observations")
    return RawSeries(series.times[idx], series.values[idx], series.label)


def log_transform(series: RawSeries) -> RawSeries:
    """Map a positive diffusion to its logarithm (support becomes the whole line)."""
    if np.any(series.values <= 0):
        i = int(np.flatnonzero(series.values <= 0)[0])
        raise InvalidInputError(f"log-transform needs positive values (index {i} is {series.values[i]!r})")
    return RawSeries(series.times, np.log(series.values), series.label)


class VarianceRatioResult(NamedTuple):
    statistic: float
    reject_at_10pct: bool
    reject_at_5pct: bool
    p_value: float
    dof: Tuple[int, int]


def variance_ratio_test(std_a: float, n_a: int, std_b: float, n_b: int) -> VarianceRatioResult:
    """F test of equal variances from group summary statistics.

    The statistic is the squared ratio of the larger to the smaller standard
    deviation, referred to the upper tail of ``F(n_large - 1, n_small - 1)``.
    """
    if not (std_a > 0 and std_b > 0):
        raise InvalidInputError("standard deviations must be positive")
    if n_a < 2 or n_b < 2:
        raise InvalidInputError("each group needs at least 2 observations")
    if std_a >= std_b:
        big, n_big, small, n_small = std_a, n_a, std_b, n_b
    else:
        big, n_big, small, n_small = std_b, n_b, std_a, n_a
    statistic = (big / small) ** 2
    dof = (int(n_big) - 1, int(n_small) - 1)
    p_value = float(stats.f.sf(statistic, *dof))
    return VarianceRatioResult(
        statistic=statistic,
        reject_at_10pct=p_value < 0.10,
        reject_at_5pct=p_value < 0.05,
        p_value=p_value,
        dof=dof,
    )


def split_by_gap(
    series: RawSeries, gap_days: float, day_count: float = 365.25, scaled: bool = False
) -> Tuple[np.ndarray, np.ndarray]:
    """Split increments into (short-gap, long-gap) groups.

    An increment is long-gap when its elapsed time exceeds ``gap_days``
    calendar days. With ``scaled`` the increments are divided by
    ``sqrt(dt)`` first.
    """
    dt = np.diff(series.times)
    inc = np.diff(series.values)
    if scaled:
        inc = inc / np.sqrt(dt)
    long_gap = dt * day_count > gap_days + 1e-9
    return inc[~long_gap], inc[long_gap]
