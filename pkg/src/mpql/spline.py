"""Evaluation of the fitted spline, its derivatives and the implied volatility."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .core import EXP_GUARD, InvalidInputError, ThetaSpline


def _taylor(rows: np.ndarray, dx: np.ndarray, order: int, degree: int) -> np.ndarray:
    # d^order/dx^order of sum_{l<=degree} rows[:, l] dx^l / l!
    out = np.zeros(dx.shape)
    for l in range(degree, order - 1, -1):
        out = rows[:, l] + out * dx / (l - order + 1)
    return out


def eval_theta(spline: ThetaSpline, x, order: int = 0):
    """Derivative of the given order of theta at ``x`` (scalar or array).

    Inside the knot range the piece anchored at the knot to the left is used,
    so the top order is right-continuous. Outside, the natural tails keep only
    orders ``0..m-1`` of the nearest boundary knot.
    """
    m = spline.m
    top = 2 * m - 1
    if not 0 <= order <= top:
        raise InvalidInputError(f"order must lie in 0..{top}, got {order}")
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    knots, table = spline.knots, spline.deriv_table
    k = np.searchsorted(knots, xs, side="right") - 1
    out = np.empty(xs.shape)

    left = k < 0
    right = xs > knots[-1]
    inside = ~(left | right)
    if inside.any():
        ki = k[inside]
        out[inside] = _taylor(table[ki], xs[inside] - knots[ki], order, top)
    for mask, anchor in ((left, 0), (right, spline.n - 1)):
        if not mask.any():
            continue
        if order >= m:
            out[mask] = 0.0
        else:
            rows = np.broadcast_to(table[anchor], (int(mask.sum()), 2 * m))
            out[mask] = _taylor(rows, xs[mask] - knots[anchor], order, m - 1)
    return float(out[0]) if scalar else out


def eval_sigma(spline: ThetaSpline, x):
    """Volatility ``exp(-theta(x))``; theta is clipped at the exponent guard so the result stays positive and finite."""
    theta = np.clip(eval_theta(spline, x, 0), -EXP_GUARD, EXP_GUARD)
    return np.exp(-theta)


def sigma_grid(
    spline: ThetaSpline,
    points: int,
    lo: Optional[float] = None,
    hi: Optional[float] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Uniform grid ``x`` (inclusive of both ends) with the volatility at each point.

    Defaults to the knot range ``[y_1, y_n]``.
    """
    if points < 2:
        raise InvalidInputError("a grid needs at least 2 points")
    lo = spline.knots[0] if lo is None else lo
    hi = spline.knots[-1] if hi is None else hi
    x = np.linspace(lo, hi, int(points))
    if lo == spline.knots[0]:
        x[0] = spline.knots[0]
    if hi == spline.knots[-1]:
        x[-1] = spline.knots[-1]
    return x, eval_sigma(spline, x)


def knot_sigma(spline: ThetaSpline) -> np.ndarray:
    return np.exp(-spline.deriv_table[:, 0])


__all__ = ["eval_sigma", "eval_theta", "knot_sigma", "sigma_grid"]
