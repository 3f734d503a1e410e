"""Quasi-log-likelihood, roughness penalty and the penalized objective."""

from __future__ import annotations

from math import factorial
from typing import Callable

import numpy as np

from .core import EXP_GUARD, DivergenceError, InvalidInputError, OrderedSample, PenaltyConfig, ThetaSpline


def qll(sample: OrderedSample, theta_values) -> float:
    """Weighted quasi-log-likelihood ``mean(theta_j - r_j^2 exp(2 theta_j) / 2)``."""
    theta = np.asarray(theta_values, dtype=float)
    if theta.shape != (sample.n,):
        raise InvalidInputError(f"expected {sample.n} theta values, got shape {theta.shape}")
    if np.any(theta > EXP_GUARD):
        j = int(np.argmax(theta))
        raise DivergenceError(f"theta[{j}] = {theta[j]:.4g} would overflow exp(2 theta)", knot=j)
    return float(np.mean(theta - 0.5 * sample.r**2 * np.exp(2.0 * theta)))


def penalty_on_interval(derivs, width, m: int):
    """Exact ``int_0^width |p(t)|^2 dt`` for ``p(t) = sum_j derivs[m+j] t^j / j!``.

    ``derivs`` has shape ``(..., 2m)``; orders below ``m`` are ignored.
    """
    derivs = np.asarray(derivs, dtype=float)
    width = np.asarray(width, dtype=float)
    coef = [derivs[..., m + j] / factorial(j) for j in range(m)]
    total = np.zeros(np.broadcast(derivs[..., 0], width).shape)
    for j in range(m):
        for l in range(m):
            p = j + l + 1
            total = total + coef[j] * coef[l] * width**p / p
    return total


def penalty(spline: ThetaSpline) -> float:
    """``int |theta^(m)(z)|^2 dz`` over the knot range, integrated piece by piece."""
    if spline.n < 2:
        return 0.0
    widths = np.diff(spline.knots)
    return float(np.sum(penalty_on_interval(spline.deriv_table[:-1], widths, spline.m)))


def pqll(sample: OrderedSample, spline: ThetaSpline, config: PenaltyConfig) -> float:
    if config.m != spline.m:
        raise InvalidInputError("penalty order differs from the spline's order")
    if spline.n != sample.n or not np.array_equal(spline.knots, sample.y):
        raise InvalidInputError("spline knots must equal the sample levels")
    return qll(sample, spline.deriv_table[:, 0]) - 0.5 * config.lam * penalty(spline)


def first_order_residual(
    sample: OrderedSample,
    spline: ThetaSpline,
    lam: float,
    test_function: Callable[[np.ndarray], np.ndarray],
) -> float:
    """Defect of the first-order optimality identity for one test function.

    Returns ``lhs - rhs`` with
    ``lhs = mean(d(y_j) (1 - r_j^2 exp(2 theta(y_j))))`` and
    ``rhs = (-1)^(m-1) lam int theta^(2m-1)(z) d'(z) dz``. The top derivative
    is piecewise constant, so the integral reduces exactly to
    ``sum_k c_k (d(y_{k+1}) - d(y_k))`` over the knot range.
    """
    m = spline.m
    theta = spline.deriv_table[:, 0]
    d = np.asarray(test_function(spline.knots), dtype=float)
    lhs = np.mean(d * (1.0 - sample.r**2 * np.exp(2.0 * theta)))
    top = spline.deriv_table[:-1, 2 * m - 1]
    rhs = (-1.0) ** (m - 1) * lam * np.sum(top * np.diff(d))
    return float(lhs - rhs)
