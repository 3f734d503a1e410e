"""Damped Newton iteration on F(a) = 0, with thinning continuation."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from . import preprocess
from .core import (
    DivergenceError,
    EstimateResult,
    InvalidInputError,
    IterationRecord,
    MaxIterationsError,
    OrderedSample,
    PenaltyConfig,
    SingularJacobianError,
    SolverConfig,
    SolverError,
    ThetaSpline,
    as_vector,
)
from .shooting import constant_volatility_seed, residual, shoot

log = logging.getLogger(__name__)

# Step halvings allowed when a trial iterate overflows before giving up.
MAX_HALVINGS = 40


def lambda_schedule(n: int, m: int, kappa: float) -> float:
    """Penalty coefficient ``kappa * n ** (-2m / (2m + 1))``."""
    if n < 1 or m < 1 or not kappa > 0:
        raise InvalidInputError("lambda_schedule needs n >= 1, m >= 1 and kappa > 0")
    return float(kappa * float(n) ** (-2.0 * m / (2.0 * m + 1.0)))


def newton_solve(
    sample: OrderedSample,
    config: PenaltyConfig,
    solver: SolverConfig = SolverConfig(),
    seed_a=None,
) -> EstimateResult:
    """Find the boundary vector ``a*`` with ``|F(a*)| < solver.epsilon``.

    Iterates ``a <- a - delta * J(a)^{-1} F(a)``; once ``|F|`` drops below
    ``solver.full_step_below`` the step is undamped so the final approach is
    quadratic. A trial iterate whose shot overflows (or whose residual exceeds
    the divergence bound) has its step halved and is retried. ``seed_a``
    defaults to the constant-volatility seed.

    Raises
    ------
    DivergenceError
        The seed itself overflows or exceeds ``solver.divergence_bound``, or
        no admissible step was found by halving.
    SingularJacobianError
        The Jacobian's condition number exceeded ``solver.max_condition``.
    MaxIterationsError
        No convergence within ``solver.max_iter`` steps. Carries the best iterate.
    """
    m = config.m
    if sample.n < m:
        raise InvalidInputError(f"need at least m = {m} observations, got {sample.n}")
    a = constant_volatility_seed(sample, m) if seed_a is None else as_vector(seed_a, m)
    F, J = residual(a, sample, config)
    res = float(np.linalg.norm(F))
    trace = [IterationRecord(a.copy(), res)]
    best_a, best_res = a.copy(), res
    it = 0
    while True:
        if res < solver.epsilon:
            final = shoot(a, sample, config)
            return EstimateResult(
                a_star=a,
                spline=final.spline,
                residual_norm=res,
                iterations=it,
                trace=tuple(trace),
                lam=config.lam,
                sample=sample,
            )
        if not res <= solver.divergence_bound:
            raise DivergenceError(
                f"diverged: |F| = {res:.3g} exceeds {solver.divergence_bound:.3g} at iteration {it}",
                a=best_a,
                residual=best_res,
            )
        if it == solver.max_iter:
            raise MaxIterationsError(
                f"max iterations exceeded ({solver.max_iter}); best |F| = {best_res:.3g}",
                a=best_a,
                residual=best_res,
            )
        cond = np.linalg.cond(J)
        if not cond <= solver.max_condition:
            raise SingularJacobianError(
                f"singular jacobian (condition {cond:.3g}) at iteration {it}",
                a=best_a,
                residual=best_res,
            )
        direction = np.linalg.solve(J, F)
        delta = 1.0 if res < solver.full_step_below else solver.delta
        a, F, J = _safeguarded_step(a, direction, delta, sample, config, solver, best_a, best_res)
        res = float(np.linalg.norm(F))
        it += 1
        trace.append(IterationRecord(a.copy(), res))
        if res < best_res:
            best_a, best_res = a.copy(), res


def _safeguarded_step(a, direction, delta, sample, config, solver, best_a, best_res):
    """Take ``a - delta * direction``, halving ``delta`` while the trial shot overflows
    or lands beyond the divergence bound."""
    for _ in range(MAX_HALVINGS + 1):
        trial = a - delta * direction
        try:
            F, J = residual(trial, sample, config)
        except DivergenceError as err:
            last = err
        else:
            if np.linalg.norm(F) <= solver.divergence_bound:
                return trial, F, J
            last = DivergenceError(f"|F| = {np.linalg.norm(F):.3g} exceeds the divergence bound")
        delta *= 0.5
    raise DivergenceError(
        f"diverged: no admissible step after {MAX_HALVINGS} halvings ({last})",
        knot=getattr(last, "knot", None),
        a=best_a,
        residual=best_res,
    )


def _transport_seed(spline: ThetaSpline, y1: float) -> np.ndarray:
    """Boundary derivatives of a coarser solution re-expressed at a new first knot."""
    from .spline import eval_theta

    return np.array([eval_theta(spline, y1, i) for i in range(spline.m)])


def continuation_solve(
    sample: OrderedSample,
    m: int,
    solver: SolverConfig = SolverConfig(),
    seed_a=None,
) -> EstimateResult:
    """Solve on successively denser time-thinned subsamples, seeding each from the last.

    For every stride ``s`` in ``solver.thinning_factors`` the raw path is
    thinned to every ``s``-th observation, returns are recomputed with the
    widened time steps and lambda is taken from ``solver.lambda_rule`` at
    the subsample size. Each level is seeded with the previous root carried
    over to the new first knot.

    With ``solver.adaptive_thinning`` a level that diverges is retried after
    inserting an intermediate stride; when no integer stride fits in between,
    an intermediate lambda is solved at the failing stride first. A diverging
    first level is retried on a coarser stride. Errors that survive are
    re-raised with ``stride`` set.
    """
    factors = solver.thinning_factors
    if sample.n < m * max(factors):
        raise InvalidInputError(
            f"sample of size {sample.n} is too small for stride {max(factors)} with m = {m}"
        )
    if max(factors) > 1 and sample.source is None:
        raise InvalidInputError("thinning needs the raw series; build the sample with order_sample")

    subsamples = {1: sample}

    def subsample(stride: int) -> OrderedSample:
        if stride not in subsamples:
            subsamples[stride] = preprocess.prepare_sample(
                preprocess.thin_series(sample.source, stride))
        return subsamples[stride]

    # Each entry is (stride, lambda override); None means "use the rule".
    pending = [(s, None) for s in factors]
    result: Optional[EstimateResult] = None
    done_stride: Optional[int] = None
    retries = 0
    while pending:
        stride, lam_override = pending[0]
        sub = subsample(stride)
        lam = solver.lambda_rule.resolve(sub.n, m) if lam_override is None else lam_override
        seed = seed_a if result is None else _transport_seed(result.spline, sub.min_level)
        try:
            level = newton_solve(sub, PenaltyConfig(m, lam), solver, seed)
        except DivergenceError as err:
            retry = None
            if solver.adaptive_thinning and retries < MAX_RETRIES:
                retry = _refine(stride, lam, done_stride, result, sample, m)
            if retry is None:
                _annotate(err, stride, sub.n)
                raise
            log.info("stride %d (lambda %.4g) diverged: %s; retrying via %s", stride, lam, err, retry)
            pending.insert(0, retry)
            retries += 1
            continue
        except SolverError as err:
            _annotate(err, stride, sub.n)
            raise
        log.debug("stride %d: n=%d lam=%.4g iterations=%d |F|=%.3g",
                  stride, sub.n, lam, level.iterations, level.residual_norm)
        result, done_stride = level, stride
        pending.pop(0)
    return result


# Coarsest subsample the adaptive continuation will fall back to.
MIN_LEVEL_SIZE = 32
MAX_RETRIES = 64


def _refine(stride, lam, done_stride, done, sample, m):
    """Intermediate (stride, lambda) level to try before a diverging one, or None."""
    if sample.source is None:
        return None
    if done is None:
        coarser = 2 * stride
        if sample.n // coarser >= max(MIN_LEVEL_SIZE, m):
            return (coarser, None)
        return None
    mid = int(round(np.sqrt(done_stride * stride)))
    if stride < mid < done_stride:
        return (mid, None)
    if abs(np.log(lam / done.lam)) > 1e-3:
        return (stride, float(np.sqrt(lam * done.lam)))
    return None


def _annotate(err: SolverError, stride: int, n: int) -> None:
    err.stride = stride
    err.args = (f"{err.args[0]} [stride {stride}, n = {n}]",)
