"""Domain types shared by the estimation pipeline.

Every type is a frozen dataclass whose array fields are copied and marked
read-only on construction, so instances can be shared freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

# |theta| above this would overflow exp(2 theta) or signals a runaway iterate.
EXP_GUARD = 350.0


class MPQLError(Exception):
    """Base class for estimation errors."""


class InvalidInputError(MPQLError, ValueError):
    """Raised when a domain object would violate one of its invariants."""


class SolverError(MPQLError, RuntimeError):
    """Base class for failures of the shooting/Newton machinery.

    ``a`` and ``residual`` carry the best iterate seen so far, when known.
    """

    def __init__(self, message: str, a=None, residual: float = float("nan"), stride: Optional[int] = None):
        super().__init__(message)
        self.a = None if a is None else np.asarray(a, dtype=float).copy()
        self.residual = residual
        self.stride = stride


class DivergenceError(SolverError):
    """Iterates blew up (exponent guard hit or residual above the divergence bound)."""

    def __init__(self, message: str, knot: Optional[int] = None, **kwargs):
        super().__init__(message, **kwargs)
        self.knot = knot


class SingularJacobianError(SolverError):
    pass


class MaxIterationsError(SolverError):
    pass


def _frozen_array(values, name: str, ndim: int = 1) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    if arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class RawSeries:
    """Timestamped observations of a single diffusion path.

    ``times`` are in years and must be strictly increasing.
    """

    times: np.ndarray
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        times = _frozen_array(self.times, "times")
        values = _frozen_array(self.values, "values")
        if times.shape != values.shape:
            raise InvalidInputError(
                f"times and values differ in length ({times.size} vs {values.size})"
            )
        if times.size < 2:
            raise InvalidInputError("a series needs at least 2 observations")
        if not np.all(np.isfinite(times)):
            raise InvalidInputError("times must be finite")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise InvalidInputError(f"non-finite value at index {bad[0]}")
        steps = np.diff(times)
        bad = np.flatnonzero(steps <= 0)
        if bad.size:
            raise InvalidInputError(
                f"times must be strictly increasing (index {bad[0] + 1}: "
                f"{times[bad[0]]!r} -> {times[bad[0] + 1]!r})"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.times.size

    @property
    def horizon(self) -> float:
        return float(self.times[-1] - self.times[0])


@dataclass(frozen=True)
class ReturnSeries:
    """Levels ``Y_{t_{i-1}}`` paired with scaled returns ``(Y_{t_i} - Y_{t_{i-1}}) / sqrt(dt)``."""

    levels: np.ndarray
    returns: np.ndarray
    source: Optional[RawSeries] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        levels = _frozen_array(self.levels, "levels")
        returns = _frozen_array(self.returns, "returns")
        if levels.shape != returns.shape:
            raise InvalidInputError("levels and returns differ in length")
        if levels.size < 1:
            raise InvalidInputError("a return series needs at least one return")
        if self.source is not None and len(self.source) != levels.size + 1:
            raise InvalidInputError("source series length must be n + 1")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "returns", returns)

    @property
    def n(self) -> int:
        return self.levels.size


@dataclass(frozen=True)
class OrderedSample:
    """Rank-ordered (level, return) pairs.

    ``order[j]`` is the time index of the rank-``j`` point, so that
    ``y == levels[order]``. ``source`` keeps the raw path when it is known;
    thinning continuation needs it to rebuild coarser subsamples.
    """

    y: np.ndarray
    r: np.ndarray
    order: Optional[np.ndarray] = None
    source: Optional[RawSeries] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        y = _frozen_array(self.y, "y")
        r = _frozen_array(self.r, "r")
        if y.shape != r.shape:
            raise InvalidInputError("y and r differ in length")
        if y.size < 1:
            raise InvalidInputError("an ordered sample needs at least one point")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(r))):
            raise InvalidInputError("levels and returns must be finite")
        if np.any(np.diff(y) <= 0):
            raise InvalidInputError(
                "levels must be strictly increasing; break ties before ordering"
            )
        if self.order is None:
            order = np.arange(y.size)
        else:
            order = np.array(self.order, dtype=np.int64, copy=True)
            if order.shape != y.shape or not np.array_equal(np.sort(order), np.arange(y.size)):
                raise InvalidInputError("order must be a permutation of 0..n-1")
        order.setflags(write=False)
        if self.source is not None and len(self.source) != y.size + 1:
            raise InvalidInputError("source series length must be n + 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "order", order)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def min_level(self) -> float:
        return float(self.y[0])

    @property
    def max_level(self) -> float:
        return float(self.y[-1])


@dataclass(frozen=True)
class PenaltyConfig:
    """Penalization order ``m`` and coefficient ``lam``."""

    m: int
    lam: float

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise InvalidInputError(f"m must be a positive integer, got {self.m!r}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvalidInputError(f"lambda must be positive, got {self.lam!r}")
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "lam", float(self.lam))


def taylor_step(derivs: np.ndarray, h) -> np.ndarray:
    """Propagate derivative values across a gap of width ``h``.

    ``derivs`` has shape ``(..., 2m)`` holding orders ``0..2m-1`` at the left
    point; ``h`` broadcasts against the leading axes. Returns orders
    ``0..2m-2`` of the degree-``(2m-1)`` Taylor polynomial at the right point.
    """
    derivs = np.asarray(derivs, dtype=float)
    h = np.asarray(h, dtype=float)
    top = derivs.shape[-1] - 1
    out = np.empty(derivs.shape[:-1] + (top,))
    for i in range(top):
        acc = derivs[..., top]
        for l in range(top - 1, i - 1, -1):
            acc = derivs[..., l] + acc * h / (l - i + 1)
        out[..., i] = acc
    return out


@dataclass(frozen=True)
class ThetaSpline:
    """Natural spline of order ``2m-1`` stored as derivative values at its knots.

    ``deriv_table[k, i]`` is the ``i``-th derivative at ``knots[k]`` for
    ``i = 0..2m-1``; the top order holds the right-continuous value. On
    ``[knots[k], knots[k+1])`` the spline is the Taylor polynomial built from
    row ``k``.
    """

    knots: np.ndarray
    deriv_table: np.ndarray
    m: int
    check_continuity: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        knots = _frozen_array(self.knots, "knots")
        table = _frozen_array(self.deriv_table, "deriv_table", ndim=2)
        m = int(self.m)
        if m < 1:
            raise InvalidInputError("m must be >= 1")
        if table.shape != (knots.size, 2 * m):
            raise InvalidInputError(
                f"deriv_table must have shape ({knots.size}, {2 * m}), got {table.shape}"
            )
        if knots.size < 1 or np.any(np.diff(knots) <= 0):
            raise InvalidInputError("knots must be non-empty and strictly increasing")
        if not np.all(np.isfinite(table)):
            raise InvalidInputError("deriv_table contains non-finite entries")
        left = table[0, m : 2 * m - 1]
        if np.any(np.abs(left) > 1e-12 * (1.0 + np.abs(table[0]).max())):
            raise InvalidInputError(
                "natural left boundary violated: orders m..2m-2 must vanish at the first knot"
            )
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "deriv_table", table)
        object.__setattr__(self, "m", m)
        if self.check_continuity:
            k = continuity_defect(knots, table)
            if k is not None:
                raise InvalidInputError(f"spline is not C^(2m-2) continuous at knot {k}")

    @property
    def n(self) -> int:
        return self.knots.size


def continuity_defect(knots: np.ndarray, table: np.ndarray, rtol: float = 1e-9) -> Optional[int]:
    """Index of the first knot whose stored values disagree with the previous piece, if any."""
    if knots.size < 2:
        return None
    predicted = taylor_step(table[:-1], np.diff(knots))
    stored = table[1:, :-1]
    bad = np.abs(predicted - stored) > rtol * (1.0 + np.abs(stored))
    rows = np.flatnonzero(bad.any(axis=1))
    return int(rows[0]) + 1 if rows.size else None


@dataclass(frozen=True)
class LambdaRule:
    """Either a fixed penalty coefficient or the schedule ``kappa * n**(-2m/(2m+1))``."""

    value: Optional[float] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        if (self.value is None) == (self.kappa is None):
            raise InvalidInputError("give exactly one of a fixed lambda or a schedule kappa")
        given = self.value if self.value is not None else self.kappa
        if not (np.isfinite(given) and given > 0):
            raise InvalidInputError(f"lambda/kappa must be positive, got {given!r}")

    @classmethod
    def fixed(cls, value: float) -> "LambdaRule":
        return cls(value=float(value))

    @classmethod
    def schedule(cls, kappa: float) -> "LambdaRule":
        return cls(kappa=float(kappa))

    def resolve(self, n: int, m: int) -> float:
        if self.value is not None:
            return self.value
        from .solver import lambda_schedule

        return lambda_schedule(n, m, self.kappa)


@dataclass(frozen=True)
class SolverConfig:
    """Knobs for the damped Newton iteration and the thinning continuation.

    Once ``|F|`` falls below ``full_step_below`` the iteration takes undamped
    steps. ``max_condition`` bounds the 2-norm condition number of the
    Jacobian. ``adaptive_thinning`` lets the continuation insert extra
    levels when one diverges.
    """

    epsilon: float = 1e-10
    delta: float = 0.1
    max_iter: int = 500
    divergence_bound: float = 1e10
    thinning_factors: Tuple[int, ...] = (1,)
    lambda_rule: LambdaRule = field(default_factory=lambda: LambdaRule.schedule(20.0))
    full_step_below: float = 1e-4
    max_condition: float = 1e14
    adaptive_thinning: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInputError("epsilon must be positive")
        if not 0 < self.delta <= 1:
            raise InvalidInputError("delta must lie in (0, 1]")
        if int(self.max_iter) < 0:
            raise InvalidInputError("max_iter must be non-negative")
        if not self.divergence_bound > 0:
            raise InvalidInputError("divergence_bound must be positive")
        factors = tuple(int(s) for s in self.thinning_factors)
        if not factors or factors[-1] != 1:
            raise InvalidInputError("thinning_factors must end with 1")
        if any(s < 1 for s in factors) or any(a <= b for a, b in zip(factors, factors[1:])):
            raise InvalidInputError("thinning_factors must be strictly descending positive integers")
        object.__setattr__(self, "thinning_factors", factors)
        object.__setattr__(self, "max_iter", int(self.max_iter))


@dataclass(frozen=True)
class IterationRecord:
    a: np.ndarray
    residual: float


@dataclass(frozen=True)
class EstimateResult:
    """Converged boundary vector, the spline it generates and the Newton trace."""

    a_star: np.ndarray
    spline: ThetaSpline
    residual_norm: float
    iterations: int
    trace: Tuple[IterationRecord, ...]
    lam: float
    sample: Optional[OrderedSample] = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        a = _frozen_array(self.a_star, "a_star")
        if a.size != self.spline.m:
            raise InvalidInputError("a_star must have length m")
        if not np.isfinite(self.residual_norm):
            raise InvalidInputError("residual_norm must be finite")
        object.__setattr__(self, "a_star", a)
        object.__setattr__(self, "trace", tuple(self.trace))

    @property
    def m(self) -> int:
        return self.spline.m


def as_vector(a: Sequence[float] | np.ndarray, m: int) -> np.ndarray:
    vec = np.array(a, dtype=float, copy=True).reshape(-1)
    if vec.size != m:
        raise InvalidInputError(f"expected a vector of length {m}, got {vec.size}")
    return vec


__all__ = [
    "EXP_GUARD",
    "DivergenceError",
    "EstimateResult",
    "InvalidInputError",
    "IterationRecord",
    "LambdaRule",
    "MPQLError",
    "MaxIterationsError",
    "OrderedSample",
    "PenaltyConfig",
    "RawSeries",
    "ReturnSeries",
    "SingularJacobianError",
    "SolverConfig",
    "SolverError",
    "ThetaSpline",
    "continuity_defect",
    "taylor_step",
]
