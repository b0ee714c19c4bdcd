"""Shared test helpers."""

import itertools

import numpy as np
import pytest
from scipy.special import logsumexp


def piecewise_image(seed: int, size: int = 28) -> np.ndarray:
    """Random piecewise-constant image: a dim background with 2-4 bright rectangles."""
    rng = np.random.default_rng(seed)
    img = np.full((size, size), rng.uniform(0.0, 0.15))
    for _ in range(rng.integers(2, 5)):
        r0, c0 = rng.integers(0, size - 6, 2)
        h, w = rng.integers(5, 14, 2)
        img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.3, 1.0)
    return img


def random_regression(seed: int, n: int = 40, p: int = 8, s: int = 3, noise_sd: float = 0.5):
    """Small dense-signal regression draw for engine tests."""
    rng = np.random.default_rng(seed)
    s = min(s, p)
    X = rng.standard_normal((n, p))
    b = np.zeros(p)
    b[rng.choice(p, size=s, replace=False)] = rng.standard_normal(s) * 2.0
    y = X @ b + noise_sd * rng.standard_normal(n)
    return X, y, b


def simplex_grid_best(log_lik: np.ndarray, step: float = 0.01) -> float:
    """Brute-force maximum of the mixture marginal likelihood over a gridded simplex.

    Enumerates every composition of 1/step into M parts and evaluates the
    objective in vectorized chunks.
    """
    m = log_lik.shape[1]
    k = round(1.0 / step)
    compositions = []
    for cuts in itertools.combinations(range(k + m - 1), m - 1):
        counts = np.diff((-1,) + cuts + (k + m - 1,)) - 1
        compositions.append(counts)
    grid = np.asarray(compositions, dtype=float) / k
    best = -np.inf
    with np.errstate(divide="ignore"):
        log_grid = np.log(grid)
    for lo in range(0, grid.shape[0], 4096):
        block = log_grid[lo:lo + 4096]
        values = logsumexp(log_lik[None, :, :] + block[:, None, :], axis=2).sum(axis=1)
        best = max(best, float(values.max()))
    return best


def finite_difference_gradient(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        bumped = theta.copy()
        bumped[i] = theta[i] + h
        hi = f(bumped)
        bumped[i] = theta[i] - h
        lo = f(bumped)
        grad[i] = (hi - lo) / (2.0 * h)
    return grad


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst component error measured against the gradient's own scale."""
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
