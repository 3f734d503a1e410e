import math

import numpy as np
import pytest

from mpql.core import InvalidInputError, OrderedSample, PenaltyConfig, ThetaSpline
from mpql.shooting import shoot
from mpql.solver import newton_solve
from mpql.spline import eval_sigma, eval_theta, knot_sigma, sigma_grid


@pytest.fixture
def spline_m2(rng):
    y = np.sort(rng.uniform(0, 3, 12))
    s = OrderedSample(y=y, r=rng.normal(size=12))
    return shoot([0.2, -0.1], s, PenaltyConfig(2, 1.0)).spline


def test_knot_values(spline_m2):
    for k in range(spline_m2.n):
        for i in range(3):
            assert eval_theta(spline_m2, spline_m2.knots[k], i) == pytest.approx(
                spline_m2.deriv_table[k, i], rel=1e-14, abs=1e-14)


def test_top_order_right_continuous(spline_m2):
    k = 5
    x = spline_m2.knots[k]
    assert eval_theta(spline_m2, x, 3) == spline_m2.deriv_table[k, 3]
    left = eval_theta(spline_m2, np.nextafter(x, -np.inf), 3)
    assert left == pytest.approx(spline_m2.deriv_table[k - 1, 3], rel=1e-14)


def test_natural_tails(spline_m2):
    y1, yn = spline_m2.knots[0], spline_m2.knots[-1]
    assert eval_theta(spline_m2, y1 - 1.0, 2) == 0.0
    assert eval_theta(spline_m2, y1 - 1.0, 3) == 0.0
    assert eval_theta(spline_m2, yn + 1.0, 2) == 0.0
    d = spline_m2.deriv_table
    assert eval_theta(spline_m2, y1 - 0.5) == pytest.approx(d[0, 0] - 0.5 * d[0, 1], rel=1e-14)
    assert eval_theta(spline_m2, yn + 0.5) == pytest.approx(d[-1, 0] + 0.5 * d[-1, 1], rel=1e-14)


def test_derivative_consistency(spline_m2):
    x = np.linspace(spline_m2.knots[0] + 1e-3, spline_m2.knots[-1] - 1e-3, 50)
    h = 1e-6
    fd = (eval_theta(spline_m2, x + h) - eval_theta(spline_m2, x - h)) / (2 * h)
    np.testing.assert_allclose(eval_theta(spline_m2, x, 1), fd, rtol=1e-6, atol=1e-7)


def test_array_and_scalar_agree(spline_m2):
    xs = np.array([-1.0, 0.5, 1.7, 4.0])
    arr = eval_theta(spline_m2, xs)
    assert isinstance(eval_theta(spline_m2, 0.5), float)
    np.testing.assert_array_equal(arr, [eval_theta(spline_m2, x) for x in xs])


def test_order_out_of_range(spline_m2):
    with pytest.raises(InvalidInputError):
        eval_theta(spline_m2, 0.0, 4)


def test_sigma_values():
    flat = ThetaSpline([0.0, 1.0], np.zeros((2, 2)), 1)
    assert eval_sigma(flat, 0.3) == 1.0
    three = ThetaSpline([0.0, 1.0], [[-math.log(3), 0.0], [-math.log(3), 0.0]], 1)
    assert eval_sigma(three, 0.5) == pytest.approx(3.0, rel=1e-15)


def test_single_point_sigma():
    res = newton_solve(OrderedSample(y=[0.1], r=[2.0]), PenaltyConfig(1, 1.0))
    assert eval_sigma(res.spline, 0.1) == pytest.approx(2.0, rel=1e-8)


def test_sigma_grid_two_points(spline_m2):
    x, sig = sigma_grid(spline_m2, 2)
    np.testing.assert_array_equal(x, spline_m2.knots[[0, -1]])
    np.testing.assert_allclose(sig, knot_sigma(spline_m2)[[0, -1]], rtol=1e-14)


def test_sigma_grid_constant():
    s = OrderedSample(y=np.linspace(0, 1, 9), r=np.full(9, 0.3))
    spline = newton_solve(s, PenaltyConfig(2, 1.0)).spline
    _, sig = sigma_grid(spline, 37)
    np.testing.assert_allclose(sig, 0.3, rtol=1e-14)


def test_sigma_grid_logistic(logistic_sample):
    spline = newton_solve(logistic_sample, PenaltyConfig(2, 0.1)).spline
    x, sig = sigma_grid(spline, 101)
    assert x.size == 101 and np.all(np.isfinite(sig)) and np.all(sig > 0)


def test_sigma_grid_validation(spline_m2):
    with pytest.raises(InvalidInputError):
        sigma_grid(spline_m2, 1)
