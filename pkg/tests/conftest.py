import math

import numpy as np
import pytest

from mpql.core import OrderedSample
from mpql.preprocess import prepare_sample
from mpql.sim import simulate_bm, simulate_logistic


def reference_shoot(a, y, r, lam, m):
    """Plain-Python forward recursion written from the jump and Taylor rules.

    Returns (table, F) with table[k][i] = Theta^(i)(y_k), the top order taken
    after the jump at y_k.
    """
    n = len(y)
    top = 2 * m - 1
    cur = [0.0] * (2 * m)
    for i in range(m):
        cur[i] = float(a[i])
    rows = []
    for k in range(n):
        cur[top] += (-1) ** m / (n * lam) * (1.0 - r[k] ** 2 * math.exp(2.0 * cur[0]))
        rows.append(list(cur))
        if k + 1 < n:
            h = y[k + 1] - y[k]
            nxt = list(cur)
            for i in range(top):
                nxt[i] = sum(cur[l] * h ** (l - i) / math.factorial(l - i) for l in range(i, 2 * m))
            cur = nxt
    return np.array(rows), np.array(rows[-1][m:])


def random_sample(rng, n, spread=1.0):
    y = np.sort(rng.uniform(-1.0, 1.0, n)) * spread
    while np.any(np.diff(y) <= 0):
        y = np.sort(rng.uniform(-1.0, 1.0, n)) * spread
    r = rng.normal(0.0, 1.0, n) * np.exp(0.3 * rng.normal(size=n))
    return OrderedSample(y=y, r=r)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def bm_sample():
    return prepare_sample(simulate_bm(512, 1.0 / 512, 1.0, seed=3))


@pytest.fixture(scope="session")
def logistic_sample():
    path, truth = simulate_logistic(512, 1.0 / 512, seed=5)
    return prepare_sample(path)


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
