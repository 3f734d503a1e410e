"""Forward propagation of the spline family Theta(.; a) and its sensitivities.

Given the boundary derivatives ``a = (Theta(y_1), ..., Theta^(m-1)(y_1))``
the spline is built knot by knot: the top derivative jumps at every knot by
``(-1)^m / (n lam) * (1 - r_k^2 exp(2 Theta(y_k)))`` and the lower orders are
carried to the next knot by Taylor expansion. ``F(a)`` collects orders
``m..2m-1`` at the last knot; the estimator is the root of ``F``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import (
    EXP_GUARD,
    DivergenceError,
    InvalidInputError,
    OrderedSample,
    PenaltyConfig,
    ThetaSpline,
    as_vector,
)


@numba.njit(cache=True, nogil=True)
def _propagate(a, y, r2, lam, m, table, sens, want_sens):
    """Fill ``table`` (n, 2m) and optionally ``sens`` (n, m, 2m) in place.

    Returns -1 on success or the index of the knot where |Theta| exceeded the
    exponent guard.
    """
    n = y.size
    top = 2 * m - 1
    sign = 1.0 if m % 2 == 0 else -1.0
    step = sign / (n * lam)
    cur = np.zeros(2 * m)
    for i in range(m):
        cur[i] = a[i]
    dcur = np.zeros((m, 2 * m))
    if want_sens:
        for i in range(m):
            dcur[i, i] = 1.0
    jump_prev = 0.0
    for k in range(n):
        theta = cur[0]
        if abs(theta) > EXP_GUARD:
            return k
        w = r2[k] * np.exp(2.0 * theta)
        cur[top] = jump_prev + step * (1.0 - w)
        jump_prev = cur[top]
        for l in range(2 * m):
            table[k, l] = cur[l]
        if want_sens:
            for i in range(m):
                dcur[i, top] += -2.0 * step * w * dcur[i, 0]
                for l in range(2 * m):
                    sens[k, i, l] = dcur[i, l]
        if k + 1 < n:
            h = y[k + 1] - y[k]
            # Horner per order; order i only reads orders >= i, so ascending i is in-place safe.
            for i in range(top):
                acc = cur[top]
                for l in range(top - 1, i - 1, -1):
                    acc = cur[l] + acc * h / (l - i + 1)
                cur[i] = acc
            if want_sens:
                for s in range(m):
                    for i in range(top):
                        acc = dcur[s, top]
                        for l in range(top - 1, i - 1, -1):
                            acc = dcur[s, l] + acc * h / (l - i + 1)
                        dcur[s, i] = acc
    return -1


@numba.njit(cache=True, nogil=True)
def _residual(a, y, r2, lam, m, want_jac):
    """F(a) and its Jacobian without materializing per-knot tables.

    ``jac[j, i] = dF_j / da_i`` (row per F component). Returns
    (F, jac, status) where status is -1 or the offending knot index.
    """
    n = y.size
    top = 2 * m - 1
    sign = 1.0 if m % 2 == 0 else -1.0
    step = sign / (n * lam)
    cur = np.zeros(2 * m)
    for i in range(m):
        cur[i] = a[i]
    dcur = np.zeros((m, 2 * m))
    for i in range(m):
        dcur[i, i] = 1.0
    F = np.zeros(m)
    jac = np.zeros((m, m))
    for k in range(n):
        theta = cur[0]
        if abs(theta) > EXP_GUARD:
            return F, jac, k
        w = r2[k] * np.exp(2.0 * theta)
        cur[top] += step * (1.0 - w)
        if want_jac:
            for s in range(m):
                dcur[s, top] += -2.0 * step * w * dcur[s, 0]
        if k + 1 < n:
            h = y[k + 1] - y[k]
            for i in range(top):
                acc = cur[top]
                for l in range(top - 1, i - 1, -1):
                    acc = cur[l] + acc * h / (l - i + 1)
                cur[i] = acc
            if want_jac:
                for s in range(m):
                    for i in range(top):
                        acc = dcur[s, top]
                        for l in range(top - 1, i - 1, -1):
                            acc = dcur[s, l] + acc * h / (l - i + 1)
                        dcur[s, i] = acc
    for j in range(m):
        F[j] = cur[m + j]
        for s in range(m):
            jac[j, s] = dcur[s, m + j]
    return F, jac, -1


@dataclass(frozen=True)
class ShootResult:
    """Outcome of one forward shot.

    ``jacobian[i, j]`` is the derivative of ``F[j]`` with respect to ``a[i]``
    (rows indexed by the boundary coordinate), so the Newton system is
    ``jacobian.T @ step = F``. ``sensitivities[k, i, j]`` is the derivative of
    ``Theta^(j)(y_k)`` with respect to ``a[i]``.
    """

    spline: ThetaSpline
    F: np.ndarray
    sensitivities: Optional[np.ndarray] = None
    jacobian: Optional[np.ndarray] = None


def _check_inputs(a, sample: OrderedSample, config: PenaltyConfig) -> np.ndarray:
    if sample.n < 1:
        raise InvalidInputError("sample is empty")
    return as_vector(a, config.m)


def shoot(
    a,
    sample: OrderedSample,
    config: PenaltyConfig,
    want_jacobian: bool = False,
) -> ShootResult:
    """Build Theta(.; a) over the sample's knots and evaluate F(a).

    Raises
    ------
    DivergenceError
        If |Theta| exceeds the exponent guard at some knot; the error's
        ``knot`` attribute names it.
    """
    a = _check_inputs(a, sample, config)
    m = config.m
    n = sample.n
    table = np.empty((n, 2 * m))
    sens = np.empty((n, m, 2 * m)) if want_jacobian else np.empty((0, m, 2 * m))
    status = _propagate(a, sample.y, sample.r**2, config.lam, m, table, sens, want_jacobian)
    if status >= 0:
        raise DivergenceError(
            f"diverged during shoot at knot {status} (|theta| > {EXP_GUARD:g})",
            knot=int(status),
            a=a,
        )
    spline = ThetaSpline(sample.y, table, m)
    F = table[-1, m:].copy()
    if not want_jacobian:
        return ShootResult(spline=spline, F=F)
    sens.setflags(write=False)
    jacobian = sens[-1, :, m:].copy()
    return ShootResult(spline=spline, F=F, sensitivities=sens, jacobian=jacobian)


def residual(a, sample: OrderedSample, config: PenaltyConfig, want_jacobian: bool = True):
    """Fast path for the Newton loop: ``(F, J)`` with ``J[j, i] = dF_j/da_i``."""
    a = _check_inputs(a, sample, config)
    F, jac, status = _residual(a, sample.y, sample.r**2, config.lam, config.m, want_jacobian)
    if status >= 0:
        raise DivergenceError(
            f"diverged during shoot at knot {status} (|theta| > {EXP_GUARD:g})",
            knot=int(status),
            a=a,
        )
    return F, (jac if want_jacobian else None)


def constant_volatility_seed(sample: OrderedSample, m: int) -> np.ndarray:
    """``a = (-log rms(r), 0, ..., 0)``: the exact root when all |r_j| coincide."""
    rms = np.sqrt(np.mean(sample.r**2))
    if not rms > 0:
        raise InvalidInputError("all returns are zero; the volatility is not identifiable")
    seed = np.zeros(m)
    seed[0] = -np.log(rms)
    return seed
