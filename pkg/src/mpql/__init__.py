"""Nonparametric estimation of a diffusion function by maximum penalized quasi-likelihood.

The estimate of ``theta = -log sigma`` is a natural spline with a knot at
every observed level; it is computed by shooting from the left boundary and
solving for the boundary derivatives with a damped Newton iteration.
"""

__version__ = "0.1.0"

from .core import (
    DivergenceError,
    EstimateResult,
    InvalidInputError,
    LambdaRule,
    MaxIterationsError,
    MPQLError,
    OrderedSample,
    PenaltyConfig,
    RawSeries,
    ReturnSeries,
    SingularJacobianError,
    SolverConfig,
    SolverError,
    ThetaSpline,
)
from .likelihood import first_order_residual, penalty, pqll, qll
from .preprocess import break_ties, compute_returns, order_sample, prepare_sample, variance_ratio_test
from .shooting import ShootResult, shoot
from .sim import convergence_study, dyadic_reduce, rmise, simulate_bm, simulate_logistic
from .solver import continuation_solve, lambda_schedule, newton_solve
from .spline import eval_sigma, eval_theta, sigma_grid

__all__ = [
    "DivergenceError", "EstimateResult", "InvalidInputError", "LambdaRule", "MaxIterationsError",
    "MPQLError", "OrderedSample", "PenaltyConfig", "RawSeries", "ReturnSeries", "ShootResult",
    "SingularJacobianError", "SolverConfig", "SolverError", "ThetaSpline", "break_ties",
    "compute_returns", "continuation_solve", "convergence_study", "dyadic_reduce", "eval_sigma",
    "eval_theta", "first_order_residual", "lambda_schedule", "newton_solve", "order_sample",
    "penalty", "pqll", "prepare_sample", "qll", "rmise", "shoot", "sigma_grid", "simulate_bm",
    "simulate_logistic", "variance_ratio_test",
]
