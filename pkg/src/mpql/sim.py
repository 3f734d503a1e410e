"""Exact path simulation, dyadic reductions and the empirical convergence-rate study."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .core import InvalidInputError, LambdaRule, OrderedSample, RawSeries, SolverConfig, SolverError, ThetaSpline
from .preprocess import prepare_sample
from .solver import continuation_solve

log = logging.getLogger(__name__)


def _brownian(steps: int, dt: float, rng: np.random.Generator) -> np.ndarray:
    w = np.empty(steps + 1)
    w[0] = 0.0
    np.cumsum(rng.standard_normal(steps) * np.sqrt(dt), out=w[1:])
    return w


def _grid(steps: int, dt: float) -> np.ndarray:
    if steps < 1 or not dt > 0:
        raise InvalidInputError("need steps >= 1 and dt > 0")
    return np.arange(steps + 1) * dt


def simulate_bm(steps: int, dt: float, sigma0: float, y0: float = 0.0, seed: int = 0) -> RawSeries:
    """Driftless Brownian motion ``y0 + sigma0 W_t`` sampled exactly on a uniform grid."""
    if not sigma0 > 0:
        raise InvalidInputError("sigma0 must be positive")
    t = _grid(steps, dt)
    w = _brownian(steps, dt, np.random.default_rng(seed))
    return RawSeries(t, y0 + sigma0 * w, label=f"bm(sigma0={sigma0})")


def logistic_sigma(y):
    """Diffusion function ``y (1 - y)`` of the logistic example."""
    y = np.asarray(y, dtype=float)
    return y * (1.0 - y)


def simulate_logistic(steps: int, dt: float, seed: int = 0) -> Tuple[RawSeries, Callable]:
    """Exact draw of ``dY = -Y^2 (1-Y) dt + Y (1-Y) dW``, ``Y_0 = 1/2``.

    Uses the closed form ``Y_t = expit(W_t - t/2)``, so only the Brownian
    driver is simulated. Returns the path and the true diffusion function.
    """
    t = _grid(steps, dt)
    w = _brownian(steps, dt, np.random.default_rng(seed))
    return RawSeries(t, expit(w - 0.5 * t), label="logistic"), logistic_sigma


def dyadic_reduce(series: RawSeries, levels: int) -> RawSeries:
    """Drop every other observation ``levels`` times (keeps indices ``0, 2^levels, ...``)."""
    if levels < 1:
        raise InvalidInputError("levels must be >= 1")
    stride = 2**levels
    if (len(series) - 1) % stride:
        raise InvalidInputError(
            f"{len(series) - 1} steps are not divisible by 2^{levels} = {stride}"
        )
    idx = np.arange(0, len(series), stride)
    return RawSeries(series.times[idx], series.values[idx], series.label)


def rmise(spline: ThetaSpline, truth: Callable, sample: OrderedSample, horizon_T: float) -> float:
    """``sqrt(T/n * sum_j (sigma*(y_j) - sigma(y_j))^2)`` over the sample's knots."""
    if spline.n != sample.n or not np.array_equal(spline.knots, sample.y):
        raise InvalidInputError("sample levels must equal the spline knots")
    err = np.exp(-spline.deriv_table[:, 0]) - np.asarray(truth(sample.y), dtype=float)
    return float(np.sqrt(horizon_T / sample.n * np.sum(err**2)))


@dataclass(frozen=True)
class StudyRow:
    q: int
    n: int
    lam: float
    rmise: float
    log2_rmise: float
    iterations: int = 0
    converged: bool = True
    message: str = ""


@dataclass(frozen=True)
class StudyReport:
    m: int
    kappa: float
    rows: Tuple[StudyRow, ...]
    intercept: float
    slope: float
    failed: Tuple[int, ...] = field(default_factory=tuple)

    @property
    def partial(self) -> bool:
        return bool(self.failed)


def fit_line(q, values) -> Tuple[float, float]:
    """Ordinary least squares ``values ~ intercept + slope * q``."""
    q = np.asarray(q, dtype=float)
    values = np.asarray(values, dtype=float)
    if q.size < 2:
        raise InvalidInputError("a line fit needs at least 2 points")
    slope, intercept = np.polyfit(q, values, 1)
    return float(intercept), float(slope)


def _estimate_level(base: RawSeries, base_q: int, q: int, m: int, kappa: float,
                    solver: SolverConfig, truth: Callable) -> Tuple[int, float, float, int]:
    path = base if q == base_q else dyadic_reduce(base, base_q - q)
    sample = prepare_sample(path)
    result = continuation_solve(sample, m, solver)
    return sample.n, result.lam, rmise(result.spline, truth, sample, path.horizon), result.iterations


def convergence_study(
    base_q: int,
    q_min: int,
    q_max: int,
    m: int,
    kappa: float,
    seed: int = 0,
    solver: Optional[SolverConfig] = None,
    repetitions: int = 1,
    max_workers: int = 1,
) -> StudyReport:
    """Fit ``log2 RMISE = intercept + slope * q`` over dyadic reductions of logistic paths.

    One path with step ``2^-base_q`` on ``[0, 1]`` is reduced to step
    ``2^-q`` for each ``q``; lambda is ``kappa * (2^-q)^(2m/(2m+1))``. With
    ``repetitions > 1`` independent paths are drawn and the RMISE averaged
    per ``q``. Levels whose solve fails are reported and left out of the fit.
    """
    if not q_min <= q_max <= base_q:
        raise InvalidInputError("need q_min <= q_max <= base_q")
    if m not in (1, 2):
        raise InvalidInputError("the study supports m in {1, 2}")
    if repetitions < 1:
        raise InvalidInputError("repetitions must be >= 1")
    if solver is None:
        solver = SolverConfig(thinning_factors=(16, 4, 1))
    # n = 2^q on [0, 1], so the n-schedule equals kappa * dt^(2m/(2m+1)).
    solver = replace(solver, lambda_rule=LambdaRule.schedule(kappa))

    seeds = np.random.SeedSequence(seed).spawn(repetitions) if repetitions > 1 else [seed]
    qs = list(range(q_min, q_max + 1))
    jobs = []
    for s in seeds:
        base, truth = simulate_logistic(2**base_q, 2.0**-base_q, seed=s)
        for q in qs:
            jobs.append((q, base, truth))

    def run(job):
        q, base, truth = job
        try:
            return q, _estimate_level(base, base_q, q, m, kappa, solver, truth), ""
        except SolverError as err:
            log.warning("q=%d failed: %s", q, err)
            return q, None, str(err)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(run, jobs))
    else:
        outcomes = [run(job) for job in jobs]

    rows: List[StudyRow] = []
    failed = []
    for q in qs:
        mine = [o for o in outcomes if o[0] == q]
        bad = [msg for _, res, msg in mine if res is None]
        good = [res for _, res, _ in mine if res is not None]
        if bad:
            failed.append(q)
            n = 2**q
            rows.append(StudyRow(q, n, solver.lambda_rule.resolve(n, m), float("nan"),
                                 float("nan"), converged=False, message=bad[0]))
            continue
        n, lam = good[0][0], good[0][1]
        err = float(np.mean([g[2] for g in good]))
        iters = int(max(g[3] for g in good))
        rows.append(StudyRow(q, n, lam, err, float(np.log2(err)), iterations=iters))

    fitted = [row for row in rows if row.converged]
    if len(fitted) >= 2:
        intercept, slope = fit_line([r.q for r in fitted], [r.log2_rmise for r in fitted])
    else:
        intercept, slope = float("nan"), float("nan")
    if failed:
        warnings.warn(f"convergence study: levels {failed} failed and were excluded from the fit")
    return StudyReport(m=m, kappa=float(kappa), rows=tuple(rows), intercept=intercept,
                       slope=slope, failed=tuple(failed))
